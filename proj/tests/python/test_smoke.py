import json
import math
import struct

import pytest

import simmer


def soup():
    return simmer.Recipe(
        id="soup",
        title="Tomato Soup",
        ingredients=["tomatoes", "salt"],
        instructions=["Simmer.", "Blend."],
        image_ref="soup.jpg",
    )


def test_image_prompts():
    q = simmer.render_image_prompt("soup.jpg", "query")
    assert q.text == "<|image_1|>\nFind a cooking recipe describing the given food image."
    assert q.direction == "i2r"
    c = simmer.render_image_prompt("soup.jpg", "candidate", "soup")
    assert c.text == "<|image_1|>\nRepresent the given food image for recipe prediction."
    assert c.source_id == "soup"


def test_recipe_prompts_and_augmentation():
    variants = simmer.augment(soup())
    assert sorted(v.mask for v in variants) == ["001", "010", "100", "111"]
    full = simmer.render_recipe_prompt(variants[0], "candidate")
    assert full.text == (
        "A cooking recipe: Title: Tomato Soup, Ingredients: tomatoes, salt, Instructions: Simmer. Blend."
    )
    title_only = simmer.render_recipe_prompt(simmer.make_variant(soup(), "100"), "query")
    assert title_only.text == "Find me a food image that matches the given cooking recipe: Title: Tomato Soup"
    with pytest.raises(simmer.UsageError):
        simmer.make_variant(soup(), "12")


def test_prompt_record_round_trip():
    sample = simmer.render_recipe_prompt(simmer.make_variant(soup(), "111"), "query")
    line = sample.to_record()
    record = json.loads(line)
    assert list(record) == ["source_id", "role", "direction", "text", "image_ref"]
    assert record["image_ref"] is None
    back = simmer.parse_prompt_record(line)
    assert back.text == sample.text
    assert back.role == "query"


def test_info_nce_closed_forms():
    q = [[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]
    c = [[1.0, 0.0]] * 3
    assert abs(simmer.info_nce(q, c, 0.02) - math.log(3)) < 1e-12
    assert simmer.info_nce([[0.3, 0.4]], [[1.0, -2.0]], 0.02) == 0.0
    loss, gq, gc = simmer.info_nce_grad([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.2], [0.1, 1.0]], 0.1)
    assert loss > 0
    assert len(gq) == 2 and len(gc[0]) == 2


def test_dump_written_by_hand_loads(tmp_path):
    path = tmp_path / "hand.bin"
    entries = [("a", [1.0, 0.0, 0.0]), ("bb", [0.0, 2.0, 0.0])]
    blob = b"SIMMEREM" + struct.pack("<III", 1, 3, len(entries))
    for ident, values in entries:
        raw = ident.encode()
        blob += struct.pack("<H", len(raw)) + raw + struct.pack("<3f", *values)
    path.write_bytes(blob)

    dump = simmer.load_dump(str(path))
    assert dump.dim == 3
    assert dump.ids == ["a", "bb"]
    assert dump.entries[1].values == [0.0, 2.0, 0.0]

    again = tmp_path / "again.bin"
    simmer.save_dump(dump, str(again))
    assert again.read_bytes() == blob

    path.write_bytes(blob[:-2])
    with pytest.raises(simmer.DataError):
        simmer.load_dump(str(path))


def test_search_and_evaluate():
    cands = simmer.EmbeddingDump(2, [simmer.EmbeddingVector(f"c{i}", [math.cos(i), math.sin(i)]) for i in range(6)])
    queries = simmer.EmbeddingDump(2, [simmer.EmbeddingVector(f"c{i}", [math.cos(i), math.sin(i)]) for i in range(6)])
    hits = simmer.top_k(queries, cands, 2)
    assert [q for q, _ in hits] == [f"c{i}" for i in range(6)]
    assert all(h[0][0] == q for q, h in hits)
    report = simmer.evaluate(queries, cands, {f"c{i}": f"c{i}" for i in range(6)}, pool=6, repeats=2)
    assert report["i2r"]["medR"] == 1.0
    assert report["i2r"]["recall"][1] == 1.0


def test_cli_pipeline(tmp_path):
    recipes, features = tmp_path / "r.jsonl", tmp_path / "f.bin"
    simmer.write_synthetic_corpus(str(recipes), str(features), pairs=64, classes=8, feature_dim=16, seed=3)
    code, _, err = simmer.run(
        ["train", "--recipes", str(recipes), "--features", str(features), "--steps", "20", "--batch-size", "16",
         "--dim", "32", "--buckets", "512", "--out", str(tmp_path / "p.bin")]
    )
    assert code == 0, err
    assert (tmp_path / "p.bin.manifest.json").exists()
    code, _, err = simmer.run(["train", "--features", str(features), "--out", str(tmp_path / "x.bin")])
    assert code == 1
    assert "--recipes" in err
