"""Dataset container, synthetic bimodal data, splitting, and batching.

The on-disk container format "MMT1" is a flat little-endian layout:

    bytes 0-3   magic ``MMT1``
    u16         version (currently 1)
    u32         record count
    u16 u16 u16 text_dim, image_dim, n_classes
    per record: u16 id length, UTF-8 id,
                text_dim float32, image_dim float32,
                n_classes label bytes in {0, 1}

Round-trips are byte-identical and need no third-party tooling.
"""

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError, SchemaError
from .rng import Rng
from .tensor import Tensor

MAGIC = b"MMT1"
VERSION = 1
TEXT_DIM = 300
IMAGE_DIM = 4096
N_CLASSES = 23

# default per-class positive rates for synthetic labels; drawn from the
# long-tailed genre distribution of the benchmark corpus and configurable
# wherever a flatter profile suits a small run
DEFAULT_LABEL_RATES = np.array(
    [
        0.538, 0.331, 0.207, 0.200, 0.148, 0.137, 0.104, 0.104,
        0.080, 0.079, 0.077, 0.074, 0.064, 0.052, 0.051, 0.044,
        0.040, 0.038, 0.032, 0.027, 0.024, 0.018, 0.013,
    ]
)

# synthetic signal routing: first block is text-only, second image-only,
# the rest is carried by one randomly chosen modality per sample
TEXT_ONLY_CLASSES = range(0, 8)
IMAGE_ONLY_CLASSES = range(8, 16)
SHARED_CLASSES = range(16, 23)


@dataclass
class Record:
    id: str
    text_emb: np.ndarray
    image_emb: np.ndarray
    labels: np.ndarray

    def validate(self, dims=(TEXT_DIM, IMAGE_DIM, N_CLASSES)):
        text_dim, image_dim, n_classes = dims
        if self.text_emb.shape != (text_dim,) or self.image_emb.shape != (image_dim,):
            raise SchemaError(
                f"record {self.id}: embedding dims {self.text_emb.shape}/{self.image_emb.shape} "
                f"do not match schema ({text_dim},)/({image_dim},)"
            )
        if self.labels.shape != (n_classes,):
            raise SchemaError(f"record {self.id}: expected {n_classes} labels, got {self.labels.shape}")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise SchemaError(f"record {self.id}: labels must be binary")


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int


def write_container(path, records, dims=(TEXT_DIM, IMAGE_DIM, N_CLASSES)):
    text_dim, image_dim, n_classes = dims
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<HIHHH", VERSION, len(records), text_dim, image_dim, n_classes)
    for rec in records:
        rec.validate(dims)
        encoded = rec.id.encode("utf-8")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
        buf += np.ascontiguousarray(rec.text_emb, dtype="<f4").tobytes()
        buf += np.ascontiguousarray(rec.image_emb, dtype="<f4").tobytes()
        buf += rec.labels.astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def read_container(path, expected_dims=(TEXT_DIM, IMAGE_DIM, N_CLASSES)):
    """Load and validate every record; raises FormatError/SchemaError."""
    with open(path, "rb") as fh:
        raw = fh.read()

    def take(n, offset, what):
        if offset + n > len(raw):
            raise FormatError(f"truncated file: needed {n} bytes for {what} at byte {offset}")
        return raw[offset : offset + n], offset + n

    chunk, off = take(4, 0, "magic")
    if chunk != MAGIC:
        raise FormatError(f"bad magic {chunk!r}, expected {MAGIC!r}")
    chunk, off = take(struct.calcsize("<HIHHH"), off, "header")
    version, count, text_dim, image_dim, n_classes = struct.unpack("<HIHHH", chunk)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    if expected_dims is not None and (text_dim, image_dim, n_classes) != tuple(expected_dims):
        raise SchemaError(
            f"header dims ({text_dim}, {image_dim}, {n_classes}) do not match "
            f"expected {tuple(expected_dims)}"
        )

    records = []
    zero_label_rows = 0
    for i in range(count):
        chunk, off = take(2, off, f"id length of record {i}")
        (id_len,) = struct.unpack("<H", chunk)
        chunk, off = take(id_len, off, f"id of record {i}")
        rec_id = chunk.decode("utf-8")
        chunk, off = take(4 * text_dim, off, f"text embedding of record {i}")
        text = np.frombuffer(chunk, dtype="<f4").copy()
        chunk, off = take(4 * image_dim, off, f"image embedding of record {i}")
        image = np.frombuffer(chunk, dtype="<f4").copy()
        chunk, off = take(n_classes, off, f"labels of record {i}")
        labels = np.frombuffer(chunk, dtype=np.uint8).copy()
        if not np.all((labels == 0) | (labels == 1)):
            raise FormatError(f"record {i} ({rec_id}): label bytes outside {{0, 1}}")
        if labels.sum() == 0:
            zero_label_rows += 1
        records.append(Record(rec_id, text, image, labels))
    if off != len(raw):
        raise FormatError(f"{len(raw) - off} trailing bytes after record {count - 1} at byte {off}")
    if zero_label_rows:
        warnings.warn(f"{zero_label_rows} records carry no positive label", stacklevel=2)
    return records


def _unit_columns(rng, rows, cols):
    m = rng.normal((rows, cols))
    return m / np.linalg.norm(m, axis=0, keepdims=True)


def generate_synthetic(seed, n, noise_sigma, label_rates=None):
    """Deterministic bimodal dataset with a known modality structure.

    Classes 0-7 are recoverable from the text embedding alone, 8-15 from the
    image embedding alone. For classes 16-22 each positive sample routes its
    activation into one randomly chosen modality, so only a model that reads
    both can recover them in full: a single modality sees at most half the
    positives. At ``noise_sigma`` 0 a linear probe on the concatenated
    embeddings separates every class exactly.
    """
    if n < 1:
        raise ContractError(f"need at least one record, got {n}")
    if noise_sigma < 0:
        raise ContractError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rates = DEFAULT_LABEL_RATES if label_rates is None else np.asarray(label_rates, dtype=np.float64)
    if rates.shape != (N_CLASSES,):
        raise ContractError(f"label_rates must have {N_CLASSES} entries, got {rates.shape}")

    root = Rng(seed)
    labels = (root.substream("synthetic-labels").random((n, N_CLASSES)) < rates).astype(np.uint8)
    text_routed = root.substream("synthetic-route").random((n, len(SHARED_CLASSES))) < 0.5

    shared = labels[:, SHARED_CLASSES.start : SHARED_CLASSES.stop].astype(np.float64)
    text_latent = np.concatenate(
        [labels[:, TEXT_ONLY_CLASSES.start : TEXT_ONLY_CLASSES.stop], shared * text_routed], axis=1
    ).astype(np.float64)
    image_latent = np.concatenate(
        [labels[:, IMAGE_ONLY_CLASSES.start : IMAGE_ONLY_CLASSES.stop], shared * ~text_routed],
        axis=1,
    ).astype(np.float64)

    proj = root.substream("synthetic-projections")
    m_text = _unit_columns(proj, TEXT_DIM, text_latent.shape[1])
    m_image = _unit_columns(proj, IMAGE_DIM, image_latent.shape[1])

    noise = root.substream("synthetic-noise")
    text = text_latent @ m_text.T
    image = image_latent @ m_image.T
    if noise_sigma > 0:
        text = text + noise.normal(text.shape, noise_sigma)
        image = image + noise.normal(image.shape, noise_sigma)
    text = text.astype(np.float32)
    image = image.astype(np.float32)

    return [
        Record(f"synth-{seed}-{i:06d}", text[i], image[i], labels[i]) for i in range(n)
    ]


def split_dataset(records, seed, train_frac=0.70, val_frac=0.10):
    """Seeded shuffle then contiguous train/validation/test cut.

    Fractions apply to the whole dataset; the remainder becomes the test
    set. The benchmark protocol uses 0.60/0.10 so that 30% is held out.
    """
    n = len(records)
    if n < 3:
        raise ContractError(f"need at least 3 records to split, got {n}")
    if not (0.0 < train_frac < 1.0 and 0.0 < val_frac < 1.0 and train_frac + val_frac < 1.0):
        raise ContractError(f"bad split fractions train={train_frac}, val={val_frac}")
    perm = Rng(seed).substream("split").permutation(n)
    n_train = int(n * train_frac + 0.5)
    n_val = int(n * val_frac + 0.5)
    train = [int(i) for i in perm[:n_train]]
    val = [int(i) for i in perm[n_train : n_train + n_val]]
    test = [int(i) for i in perm[n_train + n_val :]]
    return DatasetSplit(train=train, validation=val, test=test, seed=seed)


def materialize(records, indices=None):
    """Stack records into (text, image, labels) arrays, float32 throughout."""
    if indices is None:
        indices = range(len(records))
    text = np.stack([records[i].text_emb for i in indices]).astype(np.float32)
    image = np.stack([records[i].image_emb for i in indices]).astype(np.float32)
    labels = np.stack([records[i].labels for i in indices]).astype(np.float32)
    return text, image, labels


def batches_from_arrays(text, image, labels, batch_size, rng=None, shuffle=False):
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    n = text.shape[0]
    order = np.arange(n)
    if shuffle:
        if not isinstance(rng, Rng):
            raise ContractError("shuffled batching requires an rng stream")
        order = rng.permutation(n)
    for start in range(0, n, batch_size):
        rows = order[start : start + batch_size]
        yield Tensor(text[rows]), Tensor(image[rows]), Tensor(labels[rows])


def batches(records, indices, batch_size, rng=None, shuffle=False):
    """Stream (text, image, labels) tensors covering ``indices`` exactly once."""
    text, image, labels = materialize(records, indices)
    yield from batches_from_arrays(text, image, labels, batch_size, rng=rng, shuffle=shuffle)
