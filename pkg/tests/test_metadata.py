import sys

import numpy as np
import pytest

from depmicrodiff.data import MetadataRecord
from depmicrodiff.errors import ConfigError, DataError
from depmicrodiff.metadata import (CommandEmbedding, HashEmbedding, embed, load_precomputed, make_provider,
                                   metadata_to_text, write_precomputed)


def test_canonical_text():
    rec = MetadataRecord("s1", {"sample type": "Tumor", "stage": "II"})
    assert metadata_to_text(rec) == "sample_type: Tumor; pathologic_stage: II"
    assert metadata_to_text(MetadataRecord("s1", {})) == ""
    a = MetadataRecord("s", {"age": "50", "sample_type": "Tumor", "zeta": "1", "alpha": "2"})
    b = MetadataRecord("s", {"alpha": "2", "zeta": "1", "sample_type": "Tumor", "age": "50"})
    assert metadata_to_text(a) == metadata_to_text(b) == "sample_type: Tumor; age: 50; alpha: 2; zeta: 1"


def test_builtin_embedding_contract():
    p = HashEmbedding(32, seed=0)
    rec = MetadataRecord("s1", {"sample_type": "Tumor", "pathologic_stage": "Stage II"})
    v = embed(rec, p)
    assert v.shape == (32,) and np.all(np.isfinite(v))
    assert np.array_equal(v, embed(rec, p))
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.all(embed("", p) == 0)
    other = MetadataRecord("s1", {"sample_type": "Tumor", "pathologic_stage": "Stage III"})
    w = embed(other, p)
    assert float(v @ w) < 1.0 - 1e-6
    assert not np.array_equal(v, embed(rec, HashEmbedding(32, seed=1)))


def test_precomputed_round_trip(tmp_path):
    vecs = np.arange(12, dtype=float).reshape(3, 4) / 7
    write_precomputed(tmp_path / "e.csv", ["a", "b", "c"], vecs)
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "sample_id,dim=4"
    prov = load_precomputed(tmp_path / "e.csv")
    assert prov.dim == 4 and len(prov.table) == 3
    assert np.array_equal(prov.embed(MetadataRecord("b")), vecs[1])
    with pytest.raises(DataError, match="'zz'"):
        prov.embed("zz")


@pytest.mark.parametrize("body, match", [
    ("a,1,2\nb,1,2\na,3,4\n", "duplicate"),
    ("a,1,2\nb,1\n", "line 3"),
    ("a,1,x\n", "non-numeric"),
    ("a,1,nan\n", "non-finite"),
])
def test_precomputed_errors(tmp_path, body, match):
    p = tmp_path / "e.csv"
    p.write_text("sample_id,dim=2\n" + body)
    with pytest.raises(DataError, match=match):
        load_precomputed(p)


def test_declared_dim_enforced(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("sample_id,dim=3\na,1,2\n")
    with pytest.raises(DataError, match="expected 3"):
        load_precomputed(p)


def test_command_provider(tmp_path):
    script = tmp_path / "enc.py"
    script.write_text("import sys\nfor line in sys.stdin:\n    print(len(line.strip()), 1.0)\n")
    recs = [MetadataRecord("a", {"age": "5"}), MetadataRecord("b", {"age": "50"})]
    with pytest.raises(ConfigError):
        CommandEmbedding([sys.executable, str(script)], 2).embed_all(recs)
    prov = make_provider("command", 2, command=[sys.executable, str(script)], enabled=True)
    out = prov.embed_all(recs)
    assert out.tolist() == [[6.0, 1.0], [7.0, 1.0]]
    with pytest.raises(DataError, match="width"):
        CommandEmbedding([sys.executable, str(script)], 3, enabled=True).embed_all(recs)


def test_make_provider_errors():
    with pytest.raises(ConfigError):
        make_provider("bert")
    with pytest.raises(ConfigError):
        make_provider("precomputed")
