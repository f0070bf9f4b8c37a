"""The full network: frozen encoder, PA-MoE adapters, WGSE prompt and mask decoder."""
from __future__ import annotations

from . import numerics as nx
from .backbone import Backbone, ViTConfig
from .decoder import MaskDecoder
from .nn import Module
from .pa_moe import PAMoEAdapter
from .wgse import WGSE

# parameter-name prefix -> module label used in reports
MODULE_OF_PREFIX = {
    "backbone.alphas": "backbone",
    "adapters": "pa_moe",
    "wgse": "wgse",
    "decoder": "decoder_loss",
}


def module_of(name: str) -> str:
    for prefix, label in MODULE_OF_PREFIX.items():
        if name.startswith(prefix + "."):
            return label
    return "backbone"


class WildSAM(Module):
    def __init__(self, vit: ViTConfig, adapter_layers=(), expert_mask=(True,) * 4,
                 wgse_enabled: bool = True, seed: int = 0, backbone_seed: int = 0,
                 tap_layer: int = -1, router_ratio: int = 4):
        self.vit = vit
        self.backbone = Backbone(vit, adapter_layers, seed=backbone_seed, tap_layer=tap_layer)
        D = vit.embed_dim
        self.adapters = {
            str(i): PAMoEAdapter(D, D, seed=seed, block=i, expert_mask=expert_mask, ratio=router_ratio)
            for i in self.backbone.adapter_layers
        }
        self.wgse = WGSE(D, D, seed=seed) if wgse_enabled else None
        self.decoder = MaskDecoder(D, seed=seed)

    @property
    def grid(self):
        return self.vit.grid

    def features(self, img) -> dict:
        """Embedding, tap feature and dense prompt for one forward pass."""
        tokens, tap = self.backbone.encode(img, self.adapters)
        prompt = self.wgse(tap, self.grid) if self.wgse is not None else None
        return {"tokens": tokens, "tap": tap, "prompt": prompt}

    def forward(self, img):
        """[B,3,S,S] normalised images -> [B,S,S] mask logits."""
        img = nx.as_tensor(img)
        feats = self.features(img)
        S = img.shape[-1]
        return self.decoder(feats["tokens"], self.grid, feats["prompt"], out_size=(S, S))
