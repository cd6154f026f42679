from .archive import (
    ArchiveChecksumError,
    ArchiveError,
    ArchiveFormatError,
    ArchiveShapeError,
    ArchiveVersionError,
    DuplicateTensorError,
    canonical_json,
    check_shapes,
    load_archive,
    pack_archive,
    save_archive,
    unpack_archive,
)
from .dataset import (
    BadMagicError,
    Dataset,
    DatasetFormatError,
    HeaderError,
    LabelRangeError,
    TrailingBytesError,
    TruncatedFileError,
    UnsupportedVersionError,
    dataset_to_bytes,
    gen_synthetic,
    iter_batches,
    load_raw_dataset,
    parse_raw_dataset,
    write_raw_dataset,
)
