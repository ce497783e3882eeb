"""Convert the published benchmark HDF5 file into an MMT1 container.

The converter copies float payloads without re-encoding, so single
precision survives bitwise, and writes the flat little-endian MMT1 layout:

    magic "MMT1", u16 version=1, u32 record count,
    u16 text_dim, u16 image_dim, u16 n_classes,
    then per record: u16 id length + UTF-8 id, text_dim float32,
    image_dim float32, n_classes label bytes in {0, 1}.

Internal dataset names inside the source file are configurable because the
published release does not document them; ``--map`` flags override the
defaults below.
"""

import struct

import h5py
import numpy as np

MAGIC = b"MMT1"
VERSION = 1
EXPECTED_DIMS = (300, 4096, 23)  # text, image, classes
CHUNK_ROWS = 2048

DEFAULT_MAPPING = {
    "ids": "imdb_ids",
    "genres": "genres",
    "text": "features",
    "image": "vgg_features",
}


class ConversionError(Exception):
    """Source file cannot be converted; message says why."""


def _dataset(handle, key, role):
    if key not in handle:
        raise ConversionError(
            f"missing dataset {key!r} (role: {role}); available: {sorted(handle.keys())}"
        )
    return handle[key]


def _decode_id(value):
    if isinstance(value, bytes):
        return value.decode("utf-8")
    return str(value)


def _check_dims(role, found, expected):
    if found != expected:
        raise ConversionError(f"{role}: expected {expected} columns, found {found}")


def convert(src_path, dst_path, limit=None, mapping=None, expected_dims=EXPECTED_DIMS):
    """Write ``dst_path`` and return a summary dict.

    The summary carries the row count and per-class positive counts so the
    label distribution can be eyeballed against the published one.
    """
    names = dict(DEFAULT_MAPPING)
    if mapping:
        names.update(mapping)
    text_dim, image_dim, n_classes = expected_dims

    with h5py.File(src_path, "r") as src:
        ids = _dataset(src, names["ids"], "ids")
        genres = _dataset(src, names["genres"], "genres")
        text = _dataset(src, names["text"], "text embeddings")
        image = _dataset(src, names["image"], "image embeddings")

        rows = {ids.shape[0], genres.shape[0], text.shape[0], image.shape[0]}
        if len(rows) != 1:
            raise ConversionError(f"datasets disagree on row count: {sorted(rows)}")
        count = rows.pop()
        if limit is not None:
            count = min(count, int(limit))

        _check_dims("text embeddings", text.shape[1], text_dim)
        _check_dims("image embeddings", image.shape[1], image_dim)
        _check_dims("genres", genres.shape[1], n_classes)

        class_counts = np.zeros(n_classes, dtype=np.int64)
        with open(dst_path, "wb") as out:
            out.write(MAGIC)
            out.write(struct.pack("<HIHHH", VERSION, count, text_dim, image_dim, n_classes))
            for start in range(0, count, CHUNK_ROWS):
                stop = min(start + CHUNK_ROWS, count)
                id_block = ids[start:stop]
                text_block = np.ascontiguousarray(text[start:stop], dtype="<f4")
                image_block = np.ascontiguousarray(image[start:stop], dtype="<f4")
                label_block = np.asarray(genres[start:stop])
                if not np.all((label_block == 0) | (label_block == 1)):
                    raise ConversionError(
                        f"rows {start}..{stop - 1}: genre values outside {{0, 1}}"
                    )
                label_block = label_block.astype(np.uint8)
                class_counts += label_block.sum(axis=0, dtype=np.int64)
                for i in range(stop - start):
                    encoded = _decode_id(id_block[i]).encode("utf-8")
                    out.write(struct.pack("<H", len(encoded)))
                    out.write(encoded)
                    out.write(text_block[i].tobytes())
                    out.write(image_block[i].tobytes())
                    out.write(label_block[i].tobytes())

    return {
        "records": count,
        "class_counts": class_counts.tolist(),
        "class_frequencies": (class_counts / max(count, 1)).round(6).tolist(),
        "destination": str(dst_path),
    }
