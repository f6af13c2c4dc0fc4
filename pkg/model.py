"""
The full dual-branch network.

    images -> SiameseEncoder -> feature gates (+GSPM) -> semantic decoders
                                                      -> BTAM -> change decoder -> task interaction
                                                      -> boundary decoder

Module flags reproduce the component ablation: without the prior branch both
gates are closed (gamma = 0) and the branch is never built; without GSPM the
raw prior shallow features feed the shallow gate; without BTAM the change
features are a 1x1 conv of |F_t1 - F_t2|.
"""
import logging
from dataclasses import dataclass

import torch
import torch.nn as nn

from btam import BTAM, DifferenceHead
from checkpoint import load_prior_weights
from encoder import BranchSpec, SiameseEncoder, check_image
from fusion import GSPM, FeatureGates, gate_fuse
from heads import BoundaryDecoder, ChangeDecoder, Predictions, SemanticDecoder, TaskInteraction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture settings; a subset of TrainConfig."""

    classes: int = 5
    channels_shallow: int = 64
    channels_deep: int = 256
    channels_msa: int = 256
    decoder_width: int = 64
    stage_depths: tuple = (2, 2, 2, 2)
    alpha: float = 0.5
    prior_seed: int = 7
    use_sam_branch: bool = True
    use_gspm: bool = True
    use_btam: bool = True
    canonical_order: bool = True

    @classmethod
    def from_config(cls, config):
        return cls(
            classes=config.classes,
            channels_shallow=config.channels_shallow,
            channels_deep=config.channels_deep,
            channels_msa=config.channels_msa,
            decoder_width=config.decoder_width,
            stage_depths=tuple(config.stage_depths),
            alpha=config.alpha,
            prior_seed=config.prior_seed,
            use_sam_branch=config.use_sam_branch,
            use_gspm=config.use_gspm,
            use_btam=config.use_btam,
            canonical_order=config.canonical_order,
        )


class DBTANet(nn.Module):
    """Dual-branch semantic change detection network with boundary and temporal awareness."""

    def __init__(self, spec=ModelSpec()):
        super().__init__()
        self.spec = spec
        c_s, c_d, c_m = spec.channels_shallow, spec.channels_deep, spec.channels_msa

        local = BranchSpec(frozen=False, channels_shallow=c_s, channels_deep=c_d)
        prior = None
        if spec.use_sam_branch:
            prior = BranchSpec(frozen=True, channels_shallow=c_s, channels_deep=c_d, seed=spec.prior_seed)
        self.encoder = SiameseEncoder(local, prior, spec.stage_depths)

        self.gates = FeatureGates(spec.alpha) if spec.use_sam_branch else None
        self.gspm = GSPM(c_s) if spec.use_sam_branch and spec.use_gspm else None

        if spec.use_btam:
            self.change_features = BTAM(c_d, c_m, canonical=spec.canonical_order)
        else:
            self.change_features = DifferenceHead(c_d, c_m)

        self.semantic = SemanticDecoder(c_s, c_d, spec.classes, spec.decoder_width)
        self.change = ChangeDecoder(c_m, spec.decoder_width)
        self.boundary = BoundaryDecoder(2 * c_s)
        self.interaction = TaskInteraction(spec.decoder_width)

    @property
    def prior_branch(self):
        return self.encoder.prior

    def trainable_parameters(self):
        """Parameters handed to the optimizer; the frozen prior branch is excluded."""
        frozen = set()
        if self.prior_branch is not None:
            frozen = {id(p) for p in self.prior_branch.parameters()}
        return [p for p in self.parameters() if id(p) not in frozen and p.requires_grad]

    def fuse(self, features):
        """Apply the shallow and deep gates to one timestamp's EncoderFeatures."""
        if self.gates is None:
            shallow = gate_fuse(features.res_shallow, torch.zeros_like(features.res_shallow), 0.0)
            deep = gate_fuse(features.res_deep, torch.zeros_like(features.res_deep), 0.0)
            return shallow, deep

        prior_shallow = features.sam_shallow
        if self.gspm is not None:
            prior_shallow = self.gspm(prior_shallow)
        return (
            self.gates.shallow(features.res_shallow, prior_shallow),
            self.gates.deep(features.res_deep, features.sam_deep),
        )

    def forward(self, image_t1, image_t2):
        check_image(image_t1)
        out_size = image_t1.shape[-2:]
        feats_t1, feats_t2 = self.encoder(image_t1, image_t2)
        shallow_t1, deep_t1 = self.fuse(feats_t1)
        shallow_t2, deep_t2 = self.fuse(feats_t2)

        sem1_logits, sem1_features = self.semantic(shallow_t1, deep_t1, out_size)
        sem2_logits, sem2_features = self.semantic(shallow_t2, deep_t2, out_size)

        change_logits = self.change(self.change_features(deep_t1, deep_t2), out_size)
        change_logits = self.interaction(sem1_features, sem2_features, change_logits)

        boundary_logits = self.boundary(torch.cat([shallow_t1, shallow_t2], dim=1), out_size)

        return Predictions(
            sem1_logits=sem1_logits,
            sem2_logits=sem2_logits,
            change_logits=change_logits,
            boundary_logits=boundary_logits,
            sem1_features=sem1_features,
            sem2_features=sem2_features,
        )


def build_model(config):
    """Build a DBTANet from a TrainConfig, loading frozen-branch weights if configured."""
    model = DBTANet(ModelSpec.from_config(config))
    if config.prior_weights is not None and model.prior_branch is not None:
        load_prior_weights(config.prior_weights, model.prior_branch)
    total = sum(p.numel() for p in model.parameters())
    trainable = sum(p.numel() for p in model.trainable_parameters())
    logger.info("Built DBTANet: %d parameters, %d trainable", total, trainable)
    return model
