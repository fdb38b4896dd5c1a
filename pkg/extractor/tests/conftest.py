import csv

import numpy as np
import pytest
from PIL import Image

TEXTS = [
    "breaking: city hall flooded after record rainfall",
    "scientists discover new deep sea species near trench",
    "celebrity spotted with alien in downtown diner",
    "local bakery wins national bread competition",
    "miracle cure for all diseases found in common weed",
    "election results certified after routine recount",
    "photo shows shark swimming on a highway",
    "museum opens new wing dedicated to textiles",
    "moon base construction finished last tuesday, insiders say",
    "library extends weekend opening hours this summer",
]


def tiny_image(path, seed):
    rng = np.random.default_rng(seed)
    # blocks of contrasting intensity so region proposals have variance
    arr = rng.integers(0, 255, size=(24, 24, 3), dtype=np.uint8)
    arr[:12, :12] = rng.integers(200, 255)
    Image.fromarray(arr, "RGB").save(path)


@pytest.fixture(scope="session")
def raw_fixture(tmp_path_factory):
    """Ten tiny samples: CSV raw manifest + images on disk."""
    root = tmp_path_factory.mktemp("raw")
    rows = []
    for i, text in enumerate(TEXTS):
        img = root / f"img{i}.png"
        tiny_image(img, seed=i)
        rows.append(
            {
                "id": f"raw-{i}",
                "text": text,
                "image_path": img.name,
                "label": i % 2,
                "split": "train" if i < 8 else "val",
            }
        )
    manifest = root / "raw.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["id", "text", "image_path", "label", "split"])
        writer.writeheader()
        writer.writerows(rows)
    return manifest


def pretrained_available() -> bool:
    """True when the published encoder weights can actually be loaded."""
    try:
        from gameon_extract.encoders import PretrainedTextEncoder

        PretrainedTextEncoder(max_tokens=8)
        return True
    except Exception:
        return False
