"""
RunConfig serializers
Validate a run configuration document and materialize its defaults

This file contains serializers for:
- Every RunConfig section (dataset, networks, pretrain, mining, eval, minimax)
- The whole document, including schema version, global seed and output dir

All serializers reject unknown keys, so a typo in a config file fails the
run instead of silently falling back to a default.
"""

from rest_framework import serializers

from apps.core.validators import (
    validate_scale_schedule,
    validate_seed,
    validate_size_range,
    validate_stages,
    validate_unit_interval,
)
from apps.distmap.minimax import GENERATOR_LOSSES, OBJECTIVES
from apps.distmap.toys import TOY_KINDS
from apps.scenes.synth import SHAPE_FAMILIES

SCHEMA_VERSION = 1


class StrictSerializer(serializers.Serializer):
    """
    Serializer that rejects keys it does not declare

    Usage:
        class Section(StrictSerializer):
            value = serializers.IntegerField(default=1)

        Section(data={"valeu": 2}).is_valid()  # False, "Unknown field."
    """

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ["Unknown field."] for key in unknown})
        return super().to_internal_value(data)


class DatasetSectionSerializer(StrictSerializer):
    """
    Synthetic dataset section

    The dataset seed is the run's global seed.
    """

    num_scenes = serializers.IntegerField(default=200, min_value=1)
    image_size = serializers.IntegerField(default=64, min_value=8)
    num_categories = serializers.IntegerField(default=4, min_value=1, max_value=len(SHAPE_FAMILIES))
    size_range = serializers.ListField(
        child=serializers.FloatField(),
        default=lambda: [0.02, 0.30],
        validators=[validate_size_range],
        help_text="Object area as a fraction of the image, [min, max]",
    )
    max_objects = serializers.IntegerField(default=2, min_value=1)
    noise = serializers.FloatField(default=0.06, min_value=0.0)
    max_coverage = serializers.FloatField(default=0.45, validators=[validate_unit_interval])
    previews = serializers.BooleanField(default=False, help_text="Also write PNG previews")

    def validate(self, attrs):
        """
        Validate max_objects and size_range against the other fields

        Raises:
            ValidationError: If a scene could need more categories than exist,
                or the smallest object already exceeds the coverage cap
        """
        if attrs["max_objects"] > attrs["num_categories"]:
            raise serializers.ValidationError(
                {"max_objects": ["max_objects cannot exceed num_categories."]}
            )
        if attrs["size_range"][0] > attrs["max_coverage"]:
            raise serializers.ValidationError(
                {"size_range": ["size_range minimum cannot exceed max_coverage."]}
            )
        return attrs


class NetworksSectionSerializer(StrictSerializer):
    """Feature extractor stages and head width"""

    stages = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField()),
        default=lambda: [[16, 2, 2], [32, 2, 2], [64, 2, 1]],
        validators=[validate_stages],
        help_text="[channels, num_convs, pool_stride] per stage",
    )
    hidden = serializers.IntegerField(default=64, min_value=1)


class PretrainSectionSerializer(StrictSerializer):
    """Classifier pretraining section"""

    epochs = serializers.IntegerField(default=30, min_value=1)
    lr_extractor = serializers.FloatField(default=0.01, min_value=0.0)
    lr_modulator = serializers.FloatField(default=0.1, min_value=0.0)
    weight_decay = serializers.FloatField(default=1e-4, min_value=0.0)
    batch_size = serializers.IntegerField(default=8, min_value=1)
    lr_decay_epoch = serializers.IntegerField(default=20, min_value=0)
    lr_decay_factor = serializers.FloatField(default=0.1, min_value=0.0)
    f1_gate = serializers.FloatField(default=0.95, validators=[validate_unit_interval])


class MiningSectionSerializer(StrictSerializer):
    """Mining engine section"""

    scales = serializers.ListField(
        child=serializers.IntegerField(min_value=4),
        default=lambda: [32, 48, 64],
        validators=[validate_scale_schedule],
    )
    batch_sizes = serializers.ListField(
        child=serializers.IntegerField(min_value=1), default=lambda: [32, 16, 8]
    )
    lam = serializers.FloatField(default=0.05, min_value=0.0)
    eps = serializers.FloatField(default=1e-5, min_value=1e-12)
    modulator_epochs = serializers.IntegerField(default=15, min_value=0)
    generator_epochs = serializers.IntegerField(default=1, min_value=0)
    lr = serializers.FloatField(default=1e-3, min_value=0.0)
    weight_decay = serializers.FloatField(default=1e-4, min_value=0.0)
    max_steps = serializers.IntegerField(default=10, min_value=1)
    theta_mask = serializers.FloatField(default=0.5, validators=[validate_unit_interval])
    rho_stop = serializers.FloatField(default=0.01, validators=[validate_unit_interval])
    theta_cls = serializers.FloatField(default=0.1, validators=[validate_unit_interval])

    def validate(self, attrs):
        """One batch size per scale"""
        if len(attrs["batch_sizes"]) != len(attrs["scales"]):
            raise serializers.ValidationError(
                {"batch_sizes": ["batch_sizes must give one batch size per scale."]}
            )
        return attrs


class EvalSectionSerializer(StrictSerializer):
    """Evaluation thresholds, ablation schedule and rendering"""

    theta_fg = serializers.FloatField(default=0.5, validators=[validate_unit_interval])
    t_max = serializers.IntegerField(default=None, allow_null=True, min_value=1)
    ablation_scales = serializers.ListField(
        child=serializers.IntegerField(min_value=4),
        default=None,
        allow_null=True,
        help_text="Fixed scales mined for the scale ablation (null: every mining scale)",
    )
    render_images = serializers.IntegerField(
        default=4, min_value=0, help_text="Mining panels drawn by the full pipeline"
    )

    def validate_ablation_scales(self, value):
        """Every ablation scale must be usable by the extractor"""
        for scale in value or []:
            if scale % 4:
                raise serializers.ValidationError(f"Scale {scale} is not divisible by 4.")
        return value


class MinimaxSectionSerializer(StrictSerializer):
    """Toy distribution mapping section"""

    kind = serializers.ChoiceField(choices=TOY_KINDS, default="gaussian-mixture-1d")
    steps = serializers.IntegerField(default=3000, min_value=0)
    batch_size = serializers.IntegerField(default=256, min_value=1)
    hidden = serializers.IntegerField(default=32, min_value=1)
    lr_generator = serializers.FloatField(default=2e-3, min_value=0.0)
    lr_discriminator = serializers.FloatField(default=2e-3, min_value=0.0)
    objective = serializers.ChoiceField(choices=OBJECTIVES, default="as_written")
    generator_loss = serializers.ChoiceField(choices=GENERATOR_LOSSES, default="nonsaturating")
    logit_clamp = serializers.FloatField(default=50.0, min_value=1.0)
    eval_samples = serializers.IntegerField(default=10000, min_value=1000)
    log_every = serializers.IntegerField(default=100, min_value=1)
    histogram_bins = serializers.IntegerField(default=48, min_value=2)


SECTIONS = {
    "dataset": DatasetSectionSerializer,
    "networks": NetworksSectionSerializer,
    "pretrain": PretrainSectionSerializer,
    "mining": MiningSectionSerializer,
    "eval": EvalSectionSerializer,
    "minimax": MinimaxSectionSerializer,
}


class RunConfigSerializer(StrictSerializer):
    """
    Whole RunConfig document

    Missing sections are validated as empty objects, so validated_data
    always holds every section with every default filled in.

    Request body:
        {
            "schema_version": 1,
            "seed": 20240601,
            "dataset": {"num_scenes": 200},
            "mining": {"scales": [32, 48, 64]}
        }
    """

    schema_version = serializers.IntegerField(default=SCHEMA_VERSION)
    seed = serializers.IntegerField(default=20240601, validators=[validate_seed])
    output_dir = serializers.CharField(default=None, allow_null=True, allow_blank=False)
    dataset = DatasetSectionSerializer()
    networks = NetworksSectionSerializer()
    pretrain = PretrainSectionSerializer()
    mining = MiningSectionSerializer()
    eval = EvalSectionSerializer()
    minimax = MinimaxSectionSerializer()

    def to_internal_value(self, data):
        if isinstance(data, dict):
            data = {**{name: {} for name in SECTIONS}, **data}
        return super().to_internal_value(data)

    def validate(self, attrs):
        """
        Fill in and check the ablation scales

        A null eval.ablation_scales becomes every entry of mining.scales, so
        each fixed-scale baseline of the schedule is mined.

        Raises:
            ValidationError: If an ablation scale is not in mining.scales
        """
        scales = attrs["mining"]["scales"]
        ablation_scales = attrs["eval"]["ablation_scales"]
        if ablation_scales is None:
            attrs["eval"]["ablation_scales"] = list(scales)
        elif not set(ablation_scales) <= set(scales):
            raise serializers.ValidationError(
                {"eval": {"ablation_scales": [f"Ablation scales must be taken from mining.scales {scales}."]}}
            )
        return attrs

    def validate_schema_version(self, value):
        """
        Validate schema version

        Raises:
            ValidationError: If the document was written for another schema
        """
        if value != SCHEMA_VERSION:
            raise serializers.ValidationError(
                f"Unsupported schema_version {value}; expected {SCHEMA_VERSION}."
            )
        return value


def flatten_errors(errors, prefix=""):
    """
    Turn nested serializer errors into {"section.field": [messages]}

    Args:
        errors (dict | list): serializer.errors

    Returns:
        dict[str, list[str]]: Plain strings, ready for error.json
    """
    flat = {}
    if isinstance(errors, dict):
        for key, value in errors.items():
            name = f"{prefix}.{key}" if prefix else str(key)
            flat.update(flatten_errors(value, name))
    elif isinstance(errors, list) and errors and isinstance(errors[0], (dict, list)):
        for index, value in enumerate(errors):
            flat.update(flatten_errors(value, f"{prefix}[{index}]"))
    else:
        flat[prefix or "non_field_errors"] = [str(message) for message in errors]
    return flat

