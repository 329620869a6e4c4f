from .model import (
    Decoder,
    Encoder,
    LatentCode,
    LogicVAE,
    build_model,
    encode_images,
    images_to_tensor,
    sample,
)
from .predicates import complement_dims, klt, klu, project, rec_predicate

__all__ = [
    "Decoder",
    "Encoder",
    "LatentCode",
    "LogicVAE",
    "build_model",
    "complement_dims",
    "encode_images",
    "images_to_tensor",
    "klt",
    "klu",
    "project",
    "rec_predicate",
    "sample",
]
