"""Tests for shared/flow_cache.py: record format and the cache directory."""

import io

import numpy as np
import pytest

from core.errors import CacheFormatError, PipelineError
from shared.flow_cache import MAGIC, FlowCache, entry_path, read_import, read_record, write_import, write_record


def _image(h=4, w=5, c=3, seed=0):
    return np.random.default_rng(seed).random((h, w, c)).astype(np.float32)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

class TestRecords:
    def test_header_layout(self):
        buf = io.BytesIO()
        write_record(buf, _image(), 7)
        raw = buf.getvalue()
        assert raw[:6] == MAGIC
        assert len(raw) == 6 + 2 + 4 * 4 + 4 * 5 * 3 * 4
        assert int.from_bytes(raw[8:12], 'little') == 4
        assert int.from_bytes(raw[20:24], 'little') == 7

    def test_bytes_read_back(self):
        image = _image()
        buf = io.BytesIO()
        write_record(buf, image, 3)
        buf.seek(0)
        array, occurring_idx = read_record(buf)
        assert occurring_idx == 3
        assert np.array_equal(array, image)

    def test_bad_magic(self):
        with pytest.raises(CacheFormatError, match='not an LTR3O flow cache'):
            read_record(io.BytesIO(b'PNG\x89' + bytes(40)))

    def test_truncated_payload(self):
        buf = io.BytesIO()
        write_record(buf, _image(), 0)
        with pytest.raises(CacheFormatError, match='truncated'):
            read_record(io.BytesIO(buf.getvalue()[:-10]))

    def test_version_mismatch(self):
        buf = io.BytesIO()
        write_record(buf, _image(), 0)
        raw = bytearray(buf.getvalue())
        raw[6:8] = (9).to_bytes(2, 'little')
        with pytest.raises(CacheFormatError, match='version'):
            read_record(io.BytesIO(bytes(raw)))

    def test_channel_mismatch(self):
        buf = io.BytesIO()
        write_record(buf, _image(c=2), 0)
        buf.seek(0)
        with pytest.raises(CacheFormatError, match='channels'):
            read_record(buf, expected_channels=3)


class TestImports:
    def test_two_fields(self, tmp_path):
        path = tmp_path / 'a' / '01.l3o'
        write_import(path, _image(c=2, seed=1), _image(c=2, seed=2), 5)
        flow_oo, flow_of, occurring_idx = read_import(path)
        assert occurring_idx == 5
        assert np.array_equal(flow_oo, _image(c=2, seed=1))
        assert np.array_equal(flow_of, _image(c=2, seed=2))

    def test_wrong_channel_count(self, tmp_path):
        with pytest.raises(CacheFormatError):
            write_import(tmp_path / 'x.l3o', _image(c=3), _image(c=2), 0)


# ---------------------------------------------------------------------------
# FlowCache
# ---------------------------------------------------------------------------

class TestFlowCache:
    def test_write_read_and_listing(self, tmp_path):
        cache = FlowCache(tmp_path)
        for j in (1, 2):
            cache.write('sub01/clip00', j, _image(seed=j), 10 + j)
        assert entry_path(tmp_path, 'sub01/clip00', 2).name == '02.l3o'
        assert cache.count() == 2
        assert cache.has('sub01/clip00', 1)
        assert cache.missing(['sub01/clip00'], 3) == [('sub01/clip00', 3)]
        stack, indices = cache.load_sample('sub01/clip00', 2)
        assert stack.shape == (2, 4, 5, 3)
        assert indices == [11, 12]

    def test_overwrite_leaves_no_temp_files(self, tmp_path):
        cache = FlowCache(tmp_path)
        cache.write('s', 1, _image(seed=0), 0)
        cache.write('s', 1, _image(seed=1), 1)
        assert np.array_equal(cache.read('s', 1)[0], _image(seed=1))
        assert not list(tmp_path.rglob('*.tmp'))

    def test_miss(self, tmp_path):
        with pytest.raises(PipelineError, match='cache miss'):
            FlowCache(tmp_path).read('s', 1)

    def test_shape_check(self, tmp_path):
        cache = FlowCache(tmp_path)
        cache.write('s', 1, _image(), 0)
        with pytest.raises(CacheFormatError):
            cache.read('s', 1, expected_shape=(32, 32))

    def test_rejects_non_image(self, tmp_path):
        with pytest.raises(CacheFormatError):
            FlowCache(tmp_path).write('s', 1, _image(c=2), 0)

    def test_meta(self, tmp_path):
        cache = FlowCache(tmp_path)
        with pytest.raises(PipelineError):
            cache.read_meta()
        cache.write_meta({'k': 8, 'flow_scale': 2.0})
        assert cache.read_meta() == {'k': 8, 'flow_scale': 2.0}
