import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmtscope.errors import FormatError
from rmtscope.tensorstore import (
    ActivationBatch,
    MatrixRole,
    RoleKind,
    TensorMap,
    TokenStream,
    classify_role,
    load_role_rules,
    maps_equal,
    read_activations,
    read_checkpoint,
    read_tokens,
    write_activations,
    write_checkpoint,
    write_tokens,
)


def small_map():
    return TensorMap(
        entries={
            "a": np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32),
            "b": np.arange(6, dtype=np.float64).reshape(3, 2) + 0.5,
            "c": np.array([7.0], dtype=np.float32),
        },
        metadata={"step": "3", "note": "toy"},
    )


class TestContainerRoundTrip:
    def test_write_read_identity(self, tmp_path):
        path = tmp_path / "m.safetensors"
        tmap = small_map()
        write_checkpoint(tmap, path)
        back = read_checkpoint(path)
        assert maps_equal(tmap, back)

    def test_write_is_deterministic(self, tmp_path):
        p1, p2 = tmp_path / "a.st", tmp_path / "b.st"
        write_checkpoint(small_map(), p1)
        write_checkpoint(small_map(), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_read_write_read_byte_exact(self, tmp_path):
        p1, p2 = tmp_path / "a.st", tmp_path / "b.st"
        write_checkpoint(small_map(), p1)
        write_checkpoint(read_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_map_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="empty"):
            write_checkpoint(TensorMap(), tmp_path / "e.st")

    def test_duplicate_names_rejected_at_construction(self):
        t = np.zeros((1,), dtype=np.float32)
        with pytest.raises(ValueError, match="duplicate"):
            TensorMap.from_items([("a", t), ("a", t)])

    def test_non_finite_rejected_on_write(self, tmp_path):
        bad = TensorMap(entries={"w": np.array([[np.nan]], dtype=np.float32)})
        with pytest.raises(ValueError, match="non-finite.*'w'"):
            write_checkpoint(bad, tmp_path / "bad.st")

    @given(
        st.dictionaries(
            st.text(alphabet=st.characters(codec="utf-8", exclude_characters="\x00"), min_size=1, max_size=12),
            st.tuples(st.integers(1, 3), st.integers(1, 3), st.booleans()),
            min_size=1,
            max_size=4,
        ),
        st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, spec, seed, tmp_path_factory):
        rng = np.random.default_rng(seed)
        entries = {}
        for name, (m, n, use32) in spec.items():
            arr = rng.normal(size=(m, n)).astype(np.float32 if use32 else np.float64)
            entries[name] = arr
        tmap = TensorMap(entries=entries, metadata={"k": "v"})
        path = tmp_path_factory.mktemp("prop") / "m.st"
        write_checkpoint(tmap, path)
        assert maps_equal(tmap, read_checkpoint(path))


class TestContainerErrors:
    def test_truncated_length_prefix(self, tmp_path):
        path = tmp_path / "t.st"
        path.write_bytes(b"\x01\x02")
        with pytest.raises(FormatError, match="truncated header"):
            read_checkpoint(path)

    def test_header_length_exceeds_file(self, tmp_path):
        path = tmp_path / "t.st"
        path.write_bytes(struct.pack("<Q", 10_000) + b"{}")
        with pytest.raises(FormatError, match="truncated header"):
            read_checkpoint(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "t.st"
        payload = b"{not json"
        path.write_bytes(struct.pack("<Q", len(payload)) + payload)
        with pytest.raises(FormatError, match="malformed JSON"):
            read_checkpoint(path)

    def _container(self, header: dict, payload: bytes) -> bytes:
        blob = json.dumps(header).encode()
        return struct.pack("<Q", len(blob)) + blob + payload

    def test_size_mismatch(self, tmp_path):
        # shape [2, 3] F32 needs 24 bytes but offsets give 16
        header = {"a": {"dtype": "F32", "shape": [2, 3], "data_offsets": [0, 16]}}
        path = tmp_path / "t.st"
        path.write_bytes(self._container(header, b"\x00" * 16))
        with pytest.raises(FormatError, match="size mismatch"):
            read_checkpoint(path)

    def test_non_contiguous_offsets(self, tmp_path):
        header = {
            "a": {"dtype": "F32", "shape": [1], "data_offsets": [0, 4]},
            "b": {"dtype": "F32", "shape": [1], "data_offsets": [8, 12]},
        }
        path = tmp_path / "t.st"
        path.write_bytes(self._container(header, b"\x00" * 12))
        with pytest.raises(FormatError, match="non-contiguous"):
            read_checkpoint(path)

    def test_overlapping_offsets(self, tmp_path):
        header = {
            "a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
            "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]},
        }
        path = tmp_path / "t.st"
        path.write_bytes(self._container(header, b"\x00" * 12))
        with pytest.raises(FormatError, match="overlapping or non-contiguous"):
            read_checkpoint(path)

    def test_non_finite_payload_reports_tensor_name(self, tmp_path):
        payload = struct.pack("<2f", 1.0, float("inf"))
        header = {"weird": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]}}
        path = tmp_path / "t.st"
        path.write_bytes(self._container(header, payload))
        with pytest.raises(FormatError, match="non-finite.*'weird'"):
            read_checkpoint(path)


class TestClassifyRole:
    @pytest.mark.parametrize(
        "name,kind,block",
        [
            ("blocks.20.attn.q_proj.weight", RoleKind.QUERY, 20),
            ("blocks.2.mlp.down_proj.weight", RoleKind.DOWN, 2),
            ("lm_head.weight", RoleKind.OTHER, None),
            ("blocks.0.attn.k_proj.weight", RoleKind.KEY, 0),
            ("blocks.0.attn.v_proj.weight", RoleKind.VALUE, 0),
            ("blocks.3.attn.o_proj.weight", RoleKind.ATTN_OUTPUT, 3),
            ("blocks.1.mlp.up_proj.weight", RoleKind.UP, 1),
            ("blocks.1.mlp.gate_proj.weight", RoleKind.GATE, 1),
            ("embed.tokens.weight", RoleKind.EMBEDDING, None),
            ("encoder.layer.10.attention.output.dense.weight", RoleKind.ATTN_OUTPUT, 10),
            ("encoder.layer.10.output.dense.weight", RoleKind.DOWN, 10),
            ("encoder.layer.5.intermediate.dense.weight", RoleKind.UP, 5),
            ("h.7.attn.out_proj.weight", RoleKind.ATTN_OUTPUT, 7),
            ("model.layers.31.self_attn.o_proj.weight", RoleKind.ATTN_OUTPUT, 31),
            ("layers.0.weight", RoleKind.OTHER, 0),
        ],
    )
    def test_table(self, name, kind, block):
        role = classify_role(name)
        assert role.kind == kind
        assert role.block == block

    @given(st.text(max_size=80))
    @settings(max_examples=300, deadline=None)
    def test_total_and_deterministic(self, name):
        first = classify_role(name)
        second = classify_role(name)
        assert first == second
        assert isinstance(first.kind, RoleKind)

    def test_user_override_table(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(json.dumps({"rules": [["my_special", "gate"]]}))
        rules = load_role_rules(path)
        assert classify_role("blocks.4.my_special.weight", rules) == MatrixRole(RoleKind.GATE, block=4)
        assert classify_role("blocks.4.attn.q_proj.weight", rules).kind == RoleKind.OTHER


class TestTokenStream:
    def test_round_trip(self, tmp_path):
        stream = TokenStream(vocab_size=64, tokens=np.array([0, 1, 2], dtype=np.uint32))
        path = tmp_path / "t.tok"
        write_tokens(stream, path)
        back = read_tokens(path)
        assert back.vocab_size == 64
        assert np.array_equal(back.tokens, stream.tokens)

    def test_token_out_of_vocab(self):
        with pytest.raises(ValueError, match="64"):
            TokenStream(vocab_size=64, tokens=np.array([64], dtype=np.uint32))

    def test_file_token_out_of_vocab(self, tmp_path):
        path = tmp_path / "t.tok"
        raw = b"TOKS" + struct.pack("<I", 1) + struct.pack("<I", 64) + struct.pack("<Q", 1) + struct.pack("<I", 64)
        path.write_bytes(raw)
        with pytest.raises(FormatError, match="vocab"):
            read_tokens(path)

    def test_empty_stream_valid(self, tmp_path):
        stream = TokenStream(vocab_size=8, tokens=np.array([], dtype=np.uint32))
        path = tmp_path / "t.tok"
        write_tokens(stream, path)
        assert len(read_tokens(path)) == 0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.tok"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            read_tokens(path)

    def test_truncated_payload(self, tmp_path):
        raw = b"TOKS" + struct.pack("<I", 1) + struct.pack("<I", 8) + struct.pack("<Q", 4) + struct.pack("<I", 1)
        path = tmp_path / "t.tok"
        path.write_bytes(raw)
        with pytest.raises(FormatError, match="truncated"):
            read_tokens(path)


class TestActivations:
    def test_grouping_and_ordering(self, tmp_path):
        batches = [
            ActivationBatch("L0", np.zeros((2, 4), dtype=np.float32)),
            ActivationBatch("L0", np.ones((3, 4), dtype=np.float32)),
        ]
        path = tmp_path / "a.st"
        write_activations(batches, path)
        back = read_activations(path)
        assert [b.layer_id for b in back] == ["L0", "L0"]
        assert [b.values.shape[0] for b in back] == [2, 3]

    def test_dimension_mismatch(self, tmp_path):
        # hand-build a container with inconsistent dims for one layer
        tmap = TensorMap(
            entries={
                "act/L0/0": np.zeros((2, 4), dtype=np.float32),
                "act/L0/1": np.zeros((2, 5), dtype=np.float32),
            }
        )
        path = tmp_path / "a.st"
        write_checkpoint(tmap, path)
        with pytest.raises(FormatError, match="dimension mismatch"):
            read_activations(path)

    def test_malformed_name(self, tmp_path):
        tmap = TensorMap(entries={"act/L0": np.zeros((2, 4), dtype=np.float32)})
        path = tmp_path / "a.st"
        write_checkpoint(tmap, path)
        with pytest.raises(FormatError, match="malformed"):
            read_activations(path)

    def test_empty_container_gives_empty_sequence(self, tmp_path):
        # Writing an empty map is rejected, but an empty container is still a
        # readable file: craft one by hand.
        blob = b"{}"
        path = tmp_path / "a.st"
        path.write_bytes(struct.pack("<Q", len(blob)) + blob)
        assert read_activations(path) == []
