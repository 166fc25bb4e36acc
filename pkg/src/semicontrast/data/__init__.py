from .arrays import load_array_dataset, read_volume_dir, write_corpus, write_volume_dir
from .augment import AugmentPolicy, augment_pair, make_batch
from .preprocess import preprocess_slice, volume_slices
from .splits import split_and_select
from .synthetic import CorpusSpec, generate_synthetic_corpus
from .types import AugmentedBatch, DatasetSplits, Slice2D, Volume, check_pairing, halves_pairing

__all__ = [
    "AugmentPolicy",
    "AugmentedBatch",
    "CorpusSpec",
    "DatasetSplits",
    "Slice2D",
    "Volume",
    "augment_pair",
    "check_pairing",
    "generate_synthetic_corpus",
    "halves_pairing",
    "load_array_dataset",
    "make_batch",
    "preprocess_slice",
    "read_volume_dir",
    "split_and_select",
    "volume_slices",
    "write_corpus",
    "write_volume_dir",
]
