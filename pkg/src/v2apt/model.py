"""Full classifier: frozen-or-trainable backbone, prompts, latent generator.

One class covers every training flavor by which parameter groups exist:

- backbone + head only: plain ViT (the pretraining phase, or head-only tuning
  when the backbone is frozen);
- plus domain prompts: the deep prompting baseline;
- plus the latent generator: instance prompts composed with domain prompts.

With `prompt_inst = 0` the generator is never built, so that configuration is
the baseline itself, not an emulation of it: same parameters, same tape, same
random draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import backbone as B
from . import prompts as P
from . import vae as V
from .config import ModelConfig
from .errors import ConfigError, ContractError, ShapeError
from .rng import SeededStreams
from .tensor import Tensor, expand_leading

Params = dict[str, Tensor]


@dataclass
class ForwardResult:
    logits: Tensor  # (B, C)
    kl: Tensor | None  # scalar, present only when the generator ran
    latent: V.LatentDistribution | None
    # layer -> (composed prompt inputs (B, k, d), output patch tokens (B, P, d))
    captures: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


class PromptedClassifier:
    """Parameter container plus the prompted forward pass."""

    def __init__(self, cfg: ModelConfig, params: Params, frozen: frozenset[str] = frozenset()):
        self.cfg = cfg.validate()
        self.params = params
        self.frozen = frozen

    # -- construction ------------------------------------------------------

    @classmethod
    def init(cls, cfg: ModelConfig, streams: SeededStreams) -> "PromptedClassifier":
        """Backbone and head only; adapters are installed separately."""
        return cls(cfg, B.init_backbone(cfg, streams))

    @classmethod
    def from_pretrained(
        cls, pre: "PromptedClassifier", cfg: ModelConfig, streams: SeededStreams
    ) -> "PromptedClassifier":
        """Transfer setup: keep backbone and head weights, re-init adapters.

        Any adapters the source model carried are dropped; the new ones are
        drawn from `streams` so two transfers with the same seed match.
        """
        for name in ("image_size", "patch_size", "in_channels", "num_classes",
                     "depth", "dim", "heads", "mlp_ratio"):
            have, want = getattr(pre.cfg, name), getattr(cfg, name)
            if have != want:
                raise ConfigError(
                    f"pretrained backbone disagrees on {name}: checkpoint has {have}, config wants {want}"
                )
        params = {
            n: Tensor(p.data.copy(), requires_grad=True)
            for n, p in pre.params.items()
            if n.startswith("backbone.") or n.startswith("head.")
        }
        model = cls(cfg, params)
        model.install_adapters(streams)
        model.freeze()
        return model

    def install_adapters(self, streams: SeededStreams) -> None:
        """Add the parameter groups the config calls for (idempotent)."""
        cfg = self.cfg
        if cfg.prompt_dom > 0 and "prompts.0" not in self.params:
            self.params.update(P.init_domain_prompts(cfg, streams))
        if cfg.prompt_inst > 0 and "vae.enc.w1" not in self.params:
            self.params.update(V.init_vae(cfg, streams))

    def freeze(self) -> frozenset[str]:
        self.frozen = B.freeze_backbone(self.params)
        return self.frozen

    @property
    def has_prompts(self) -> bool:
        return "prompts.0" in self.params

    @property
    def has_generator(self) -> bool:
        return "vae.enc.w1" in self.params

    @property
    def active_budget(self) -> int:
        """Prompt tokens actually present in the sequence."""
        k = 0
        if self.has_generator:
            k += self.cfg.prompt_inst
        if self.has_prompts:
            k += self.cfg.prompt_dom
        return k

    def trainables(self) -> Params:
        return {n: p for n, p in sorted(self.params.items()) if p.requires_grad}

    def frozen_digest(self) -> str:
        return B.frozen_digest(self.params, self.frozen)

    # -- forward -----------------------------------------------------------

    def _composed_prompts(
        self, embeddings: Tensor, batch: int, train: bool, eps: Tensor | None, rng
    ) -> tuple[list[Tensor] | None, Tensor | None, V.LatentDistribution | None]:
        cfg = self.cfg
        inst = dom = None
        kl = dist = None
        if self.has_generator:
            pooled = V.pool_input_embeddings(embeddings)
            dist = V.encode(pooled, self.params, cfg)
            z = V.reparameterize(dist, rng=rng, train=train, eps=eps)
            inst = V.decode(z, self.params, cfg)
            kl = V.kl_divergence(dist)
        if self.has_prompts:
            dom = [
                expand_leading(self.params[f"prompts.{i}"], batch) for i in range(cfg.depth)
            ]
        if inst is not None and dom is not None:
            return V.compose_prompts(inst, dom, cfg), kl, dist
        if inst is not None:
            if cfg.prompt_inst != cfg.prompt_len:
                raise ConfigError(
                    f"token budget violated: {cfg.prompt_inst} instance tokens alone != k = {cfg.prompt_len}"
                )
            return inst, kl, dist
        if dom is not None:
            return dom, kl, dist
        return None, kl, dist

    def _assert_parity(self, seq: Tensor, layer_idx: int, layout: P.SequenceLayout) -> None:
        # the token-budget contract: every layer sees 1 + k + num_patches tokens
        expected = 1 + self.active_budget + self.cfg.num_patches
        if seq.shape[-2] != expected or seq.shape[-2] != layout.total:
            raise ContractError(
                f"layer {layer_idx}: sequence length {seq.shape[-2]} != 1 + {self.active_budget} "
                f"+ {self.cfg.num_patches}"
            )

    def forward(
        self,
        images: np.ndarray,
        train: bool = False,
        eps: Tensor | None = None,
        rng: np.random.Generator | None = None,
        capture_layers: Sequence[int] = (),
    ) -> ForwardResult:
        """Run the model on a pixel batch.

        `train` controls latent sampling only (there is no dropout); `eps`
        pins the reparameterization draw, otherwise `rng` supplies it. With
        `capture_layers`, the composed prompt inputs and output patch tokens
        of those layers are returned as plain arrays for analysis.
        """
        cfg = self.cfg
        if images.ndim != 4:
            raise ShapeError(f"expected (B, H, W, C) pixels, got {images.shape}")
        batch = images.shape[0]
        embeddings = B.patch_embed(images, self.params, cfg)
        composed, kl, dist = self._composed_prompts(embeddings, batch, train, eps, rng)
        layout = P.SequenceLayout(prompt_len=self.active_budget, num_patches=cfg.num_patches)
        cls = expand_leading(self.params["backbone.cls"], batch)

        captures: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        x = None
        for i in range(cfg.depth):
            if i == 0:
                block = P.merge_sequence(cls, composed[0] if composed else None, embeddings)
            else:
                stripped = P.strip_prompt_tokens(x, layout)
                if composed:
                    block = P.splice_prompts(composed[i], stripped, layout)
                else:
                    block = stripped
            self._assert_parity(block, i, layout)
            x = B.encoder_layer_forward(i, block, self.params, cfg)
            if i in capture_layers:
                prompt_in = composed[i].data.copy() if composed else np.zeros((batch, 0, cfg.dim))
                captures[i] = (prompt_in, P.patch_tokens(x, layout).data.copy())

        x = B.final_norm(x, self.params)
        cls_out = P.cls_token(x, layout).reshape(batch, cfg.dim)
        logits = B.classify(cls_out, self.params)
        return ForwardResult(logits=logits, kl=kl, latent=dist, captures=captures)

    def predict(self, images: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Eval-mode class predictions; ties resolve to the lowest index."""
        out = []
        for lo in range(0, images.shape[0], chunk):
            logits = self.forward(images[lo:lo + chunk], train=False).logits.data
            out.append(np.argmax(logits, axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
