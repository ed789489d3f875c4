"""
Tape-based autodiff in a few hundred lines
==========================================

The whole training stack sits on one reverse-mode engine: a `Tape` records
every primitive as it executes, and `backward` replays the records in
reverse. This script walks the essentials — building a graph, reading
gradients, and trusting them via finite differences.
"""

# %%
# A tensor is a numpy array plus a gradient slot. Operations compose with
# normal Python operators; nothing is recorded until a tape is active.

import numpy as np

from v2apt import Tape, Tensor, float64_mode
from v2apt.tensor import gelu, softmax

w = Tensor(np.array([[0.5, -1.0], [2.0, 0.25]]), requires_grad=True)
x = Tensor(np.array([[1.0, 3.0]]))

with Tape() as tape:
    h = gelu(x @ w)
    loss = (h * h).sum()
    tape.backward(loss)

print("loss:", loss.item())
print("dloss/dw:\n", w.grad)

# %%
# The gradient of a sum of squares through a GELU is easy to get wrong by
# hand, so the package ships the checker it uses on itself. It perturbs every
# entry of every parameter and compares the difference quotient against the
# taped gradient. 64-bit mode matters here: in float32 the quotient drowns
# in rounding noise.

from v2apt import finite_diff_check

with float64_mode():
    p = Tensor(np.linspace(-1.2, 1.4, 6).reshape(2, 3), requires_grad=True)

    def build_loss():
        s = softmax(p)
        return (s * s).sum()

    report = finite_diff_check(build_loss, {"p": p})

print(report.summary())

# %%
# The same machinery scales to the full prompted model: every trainable
# parameter group (prompts, generator weights, classification head) is
# checked end to end through the frozen transformer. This is the package's
# first acceptance gate, and the `v2apt gradcheck` subcommand runs exactly
# this.

from v2apt import full_model_check

report = full_model_check()
worst = max(r.max_rel_err for r in report.params.values())
print(f"{len(report.params)} parameter groups, worst relative error {worst:.2e}")
