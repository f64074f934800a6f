"""Python interface to the geoshield protection library.

Images are float64 arrays of shape (height, width, 3) with values in [0, 1].
"""

from ._geoshield import (
    AttackConfig,
    CapabilityError,
    ContractError,
    DegenerateDecompositionError,
    DomainError,
    EmptyReportError,
    EncoderPair,
    GeoShieldError,
    IoError,
    ProtocolError,
    SolverError,
    TransformError,
    TransportError,
    ValidationError,
    bucket_accuracy,
    cosine_similarity,
    distance_report,
    evaluate_dataset,
    evaluate_predictions,
    format_coordinates,
    gaussian_blur,
    haversine_km,
    jpeg_roundtrip,
    load_image,
    parse_coordinates,
    protect,
    protect_dataset,
    resize,
    rouge_l_f1,
    save_png,
    sentence_bleu,
    synthetic_scene,
    targeted_baseline,
    toy_encoder,
    untargeted_baseline,
    write_synthetic_dataset,
)

__version__ = "0.1.0"


def schema_path(name):
    """Path of a shipped JSON schema, e.g. schema_path("distance_report")."""
    from importlib import resources

    return resources.files(__name__) / "schemas" / f"{name}.schema.json"
