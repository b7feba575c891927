"""Converter stub: plugging real image data into the FSDS pipeline.

The pipeline consumes two FSDS files, a base split for pretraining and a
novel split for episodes, with disjoint class sets. Any dataset you can get
into float32 [N, C, H, W] arrays in [0, 1] with integer labels plugs in
through save_dataset; point the config's data.base_path / data.novel_path
at the files and every stage runs unchanged. Downloading and decoding a
real benchmark is out of scope here, so this stub converts stand-in arrays
shaped like one (32x32 RGB, 64 base / 20 novel classes) and shows the wiring.
"""

import numpy as np

from lffs.data import Dataset, load_dataset, save_dataset


def convert_split(images: np.ndarray, labels: np.ndarray, split: str, path: str):
    """images: float array [N, C, H, W]; labels: ints in [0, class_count).

    Real pipelines land here after decoding: scale pixels to [0, 1],
    cast to float32, remap label ids to a dense [0, class_count) range.
    """
    images = np.clip(np.asarray(images, dtype=np.float32), 0.0, 1.0)
    labels = np.asarray(labels, dtype=np.int64)
    class_count = int(labels.max()) + 1
    ds = Dataset(images, labels, class_count, split)
    save_dataset(ds, path)
    return ds


rng = np.random.default_rng(0)

# Stand-ins with CIFAR-FS-like geometry; swap in decoded real images here.
base_images = rng.random((64 * 10, 3, 32, 32), dtype=np.float32)
base_labels = np.repeat(np.arange(64), 10)
novel_images = rng.random((20 * 10, 3, 32, 32), dtype=np.float32)
novel_labels = np.repeat(np.arange(20), 10)

convert_split(base_images, base_labels, "base", "/tmp/byod_base.fsds")
convert_split(novel_images, novel_labels, "novel", "/tmp/byod_novel.fsds")

back = load_dataset("/tmp/byod_base.fsds")
print("round trip:", back.images.shape, back.class_count, back.split)
print()
print("config wiring:")
print('  {"data": {"base_path": "/tmp/byod_base.fsds",')
print('            "novel_path": "/tmp/byod_novel.fsds"}}')
print("then: lffs --config that.json pretrain / distill / eval")
