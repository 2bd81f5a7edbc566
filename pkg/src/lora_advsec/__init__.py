"""Adversarial security toolkit for LoRa-style I/Q signal classification."""

__version__ = "0.1.0"

from lora_advsec.errors import ConfigError, FormatError  # noqa: E402

from lora_advsec.attacks import (  # noqa: E402
    AttackSpec,
    AspPoint,
    evaluate_asp,
    fgsm_hybrid,
    fgsm_hybrid_targeted,
    fgsm_multitask_targeted,
    fgsm_multitask_untargeted,
    fgsm_targeted,
    fgsm_untargeted,
    gaussian_baseline,
    psr_to_epsilon,
    read_asp_csv,
    write_asp_csv,
)
from lora_advsec.data import (  # noqa: E402
    Dataset,
    DeviceProfile,
    convert_raw_f32,
    generate_dataset,
    generate_legitimate,
    generate_rogue,
    load_dataset,
    mean_signal_power,
    save_dataset,
    split,
)
from lora_advsec.defense import (  # noqa: E402
    DefenseConfig,
    DefenseRow,
    adversarial_training,
    evaluate_defense,
    read_defense_csv,
    write_defense_csv,
)
from lora_advsec.models import (  # noqa: E402
    Metrics,
    MultiTaskClassifier,
    SingleTaskClassifier,
    compute_metrics,
    evaluate,
    evaluate_multitask,
    evaluate_subset,
)
from lora_advsec.pipeline import (  # noqa: E402
    StageError,
    default_config,
    load_config,
    run_pipeline,
)
from lora_advsec.spoof import GaussianKde, RogueTransform, jsd  # noqa: E402

__all__ = [
    "AspPoint",
    "AttackSpec",
    "ConfigError",
    "Dataset",
    "DefenseConfig",
    "DefenseRow",
    "DeviceProfile",
    "FormatError",
    "GaussianKde",
    "Metrics",
    "MultiTaskClassifier",
    "RogueTransform",
    "SingleTaskClassifier",
    "StageError",
    "__version__",
    "adversarial_training",
    "compute_metrics",
    "convert_raw_f32",
    "default_config",
    "evaluate",
    "evaluate_asp",
    "evaluate_defense",
    "evaluate_multitask",
    "evaluate_subset",
    "fgsm_hybrid",
    "fgsm_hybrid_targeted",
    "fgsm_multitask_targeted",
    "fgsm_multitask_untargeted",
    "fgsm_targeted",
    "fgsm_untargeted",
    "gaussian_baseline",
    "generate_dataset",
    "generate_legitimate",
    "generate_rogue",
    "jsd",
    "load_config",
    "load_dataset",
    "mean_signal_power",
    "psr_to_epsilon",
    "read_asp_csv",
    "read_defense_csv",
    "run_pipeline",
    "save_dataset",
    "split",
    "write_asp_csv",
    "write_defense_csv",
]
