import numpy as np
import pytest

from mmquality.dataset_io import ContentItem
from mmquality.synthgen import SynthConfig, generate_items


def make_item(item_id, d_text=4, d_image=3, n_images=2, seed=0, **kw):
    rng = np.random.default_rng(seed)
    return ContentItem(
        id=item_id,
        text_embedding=rng.normal(size=d_text),
        image_embeddings=tuple(rng.normal(size=d_image) for _ in range(n_images)),
        **kw,
    )


@pytest.fixture
def small_items():
    return generate_items(SynthConfig(n_items=60, d_text=6, d_image=4, seed=3))
