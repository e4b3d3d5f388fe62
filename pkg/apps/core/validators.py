"""
Custom validators for run configuration values
Input validation functions used by the RunConfig serializers

This file contains validators for:
- Object size ranges (fractions of the image area)
- Multi-scale schedules (strictly increasing, divisible resolutions)
- Probabilities and thresholds
- Seeds and feature-extractor stage lists
"""

from django.core.exceptions import ValidationError


def validate_size_range(value):
    """
    Validate an object size range

    Ensures the range is:
    - A pair [min_frac, max_frac]
    - 0 < min_frac <= max_frac < 1

    Args:
        value (list): [min_frac, max_frac]

    Raises:
        ValidationError: If the range is invalid

    Examples:
        validate_size_range([0.02, 0.30])   # OK
        validate_size_range([0.3, 0.2])     # Raises ValidationError
    """

    if len(value) != 2:
        raise ValidationError(
            "size_range must contain exactly two fractions [min, max].",
            code="invalid_size_range_length",
        )

    low, high = value
    if not 0 < low <= high < 1:
        raise ValidationError(
            f"size_range {list(value)} must satisfy 0 < min <= max < 1.",
            code="invalid_size_range_order",
        )


def validate_scale_schedule(value):
    """
    Validate a multi-scale schedule S = [s_1, ..., s_K]

    Ensures:
    - At least two scales (K >= 2)
    - Strictly increasing
    - Every scale divisible by 4 (the extractor's output stride)

    Args:
        value (list[int]): Input resolutions per step

    Raises:
        ValidationError: If the schedule is invalid
    """

    if len(value) < 2:
        raise ValidationError(
            "The scale schedule needs at least two scales (K >= 2).",
            code="invalid_scales_too_short",
        )

    for previous, current in zip(value, value[1:]):
        if current <= previous:
            raise ValidationError(
                f"Scales must be strictly increasing, got {list(value)}.",
                code="invalid_scales_order",
            )

    for scale in value:
        if scale % 4:
            raise ValidationError(
                f"Scale {scale} is not divisible by the extractor stride 4.",
                code="invalid_scales_stride",
            )


def validate_unit_interval(value):
    """Validate a threshold in [0, 1]"""

    if not 0.0 <= value <= 1.0:
        raise ValidationError(
            f"Value {value} must lie in [0, 1].", code="invalid_unit_interval"
        )


def validate_seed(value):
    """Validate a 64-bit unsigned seed"""

    if not 0 <= value < 2**64:
        raise ValidationError(
            f"Seed {value} must be a non-negative 64-bit integer.",
            code="invalid_seed",
        )


def validate_stages(value):
    """
    Validate feature-extractor stages

    Each stage is [channels, num_convs, pool_stride] with pool stride 1 or 2.
    The total stride must be 4 so features sit at input/4 resolution.

    Args:
        value (list[list[int]]): Stage triples

    Raises:
        ValidationError: If a stage is malformed or the stride is not 4
    """

    if not value:
        raise ValidationError("At least one stage is required.", code="invalid_stages")

    total_stride = 1
    for stage in value:
        if len(stage) != 3:
            raise ValidationError(
                f"Stage {stage} must be [channels, num_convs, pool_stride].",
                code="invalid_stage_shape",
            )
        channels, num_convs, pool_stride = stage
        if channels < 1 or num_convs < 1 or pool_stride not in (1, 2):
            raise ValidationError(
                f"Stage {stage} has invalid channels, conv count or pool stride.",
                code="invalid_stage_values",
            )
        total_stride *= pool_stride

    if total_stride != 4:
        raise ValidationError(
            f"Stages give output stride {total_stride}; stride 4 is required.",
            code="invalid_stage_stride",
        )
