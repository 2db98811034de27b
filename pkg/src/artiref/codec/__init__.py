from .coder import (
    QP_SET,
    BlockRecord,
    CodecError,
    CodedPicture,
    ConfigurationError,
    DecodeError,
    Mode,
    PictureStats,
    RDPoint,
    ReferenceList,
    SequenceResult,
    code_sequence,
    decode_picture,
    decode_sequence,
    encode_picture,
    rd_lambda,
    read_stream,
    write_stats_csv,
    write_stream,
)
from .motion import motion_search
from .transform import qstep, residual_transform_quantize, se_golomb_bits

__all__ = [
    "QP_SET",
    "BlockRecord",
    "CodecError",
    "CodedPicture",
    "ConfigurationError",
    "DecodeError",
    "Mode",
    "PictureStats",
    "RDPoint",
    "ReferenceList",
    "SequenceResult",
    "code_sequence",
    "decode_picture",
    "decode_sequence",
    "encode_picture",
    "motion_search",
    "qstep",
    "rd_lambda",
    "read_stream",
    "residual_transform_quantize",
    "se_golomb_bits",
    "write_stats_csv",
    "write_stream",
]
