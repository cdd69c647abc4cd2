"""Shared fixture: a miniature media corpus with informative captions."""

import json

import numpy as np
import pytest

TOPICS = [
    ("a red bird sits on a tree branch",
     "small red bird perched on a branch",
     ["a man rides a motorcycle downhill", "two children play chess"]),
    ("a chef cooks pasta in a kitchen",
     "chef stirring pasta in the kitchen",
     ["a dog catches a frisbee", "sunset over the ocean waves"]),
    ("a dog catches a yellow frisbee",
     "dog jumping to catch a frisbee",
     ["a chef cooks soup", "city traffic at night"]),
    ("two children play chess in a park",
     "kids playing chess outdoors in a park",
     ["a red bird flies away", "a woman paints a wall"]),
    ("a woman paints a mural on a wall",
     "woman painting a colorful mural",
     ["pasta boiling in a pot", "a cat sleeps on a sofa"]),
    ("a cat sleeps on a blue sofa",
     "cat napping on the sofa",
     ["children run in a park", "a train crosses a bridge"]),
    ("a train crosses an old stone bridge",
     "train passing over a stone bridge",
     ["a bird eats seeds", "people dance at a wedding"]),
    ("people dance at a wedding party",
     "guests dancing at a wedding",
     ["a train leaves the station", "a chef cuts vegetables"]),
    ("a man rides a motorcycle on a road",
     "motorcycle rider on an open road",
     ["a cat chases a mouse", "waves crash on rocks"]),
    ("waves crash on rocky shore at sunset",
     "ocean waves hitting the rocks at sunset",
     ["a wedding cake is cut", "a mural covers the wall"]),
    ("a farmer harvests wheat in a field",
     "farmer cutting wheat in the field",
     ["a motorcycle engine revs", "kids fly a kite"]),
    ("children fly a kite on a windy hill",
     "kids flying a kite on the hill",
     ["wheat sways in the wind", "a bridge spans the river"]),
]


def write_ppm(path, rng, size=8):
    img = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{size} {size}\n255\n".encode() + img.tobytes())


@pytest.fixture()
def media_corpus(tmp_path):
    """12 videos with PPM frames, queries, and one informative caption each."""
    rng = np.random.default_rng(0)
    lines = []
    for i, (query, good_caption, distractors) in enumerate(TOPICS):
        frames = []
        for j in range(3):
            fname = f"vid{i:02d}_f{j}.ppm"
            write_ppm(str(tmp_path / fname), rng)
            frames.append(fname)
        lines.append({
            "id": f"vid{i:02d}",
            "frames": frames,
            "query": query,
            "captions": [distractors[0], good_caption, distractors[1]],
        })
    manifest = tmp_path / "input.jsonl"
    manifest.write_text("\n".join(json.dumps(x) for x in lines) + "\n")
    return str(manifest)
