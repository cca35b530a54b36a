"""Lifelong few-shot image generation with factorized weight modulators."""

from .left import (
    ActivationKind,
    ConvShape,
    LeftConvModulator,
    LeftFcModulator,
    ModulatorSet,
    ShapeError,
    init_identity,
    modulate_conv,
    modulate_fc,
    param_count,
    reconstruct_beta_conv,
    reconstruct_fc,
    reconstruct_gamma_conv,
)
from .nets import (
    DiscriminatorConfig,
    ForwardRecord,
    FrozenParameterError,
    GeneratorConfig,
    backward,
    discriminator_forward,
    generator_forward,
    identity_modulator_set,
    init_discriminator,
    init_generator,
    weights_hash,
)
from .losses import CmsConfig, adv_d_loss, adv_g_loss, cms_loss, ms_loss_original, total_g_loss
from .metrics import (
    ClusterAssignment,
    DownsampledEmbedding,
    DownsampledL1,
    RandomConvFeatures,
    assign_clusters,
    b_lpips,
    frechet_embedding_distance,
    i_lpips,
    p_lpips,
)
from .lifelong import (
    DistanceMatrix,
    ModulatorRegistry,
    TaskSpec,
    TrainConfig,
    generate_for_task,
    order_tasks,
    train_task,
)
from .checkpoint import CheckpointError, load_modulators, predicted_size, save_modulators

__version__ = "0.1.0"
