from __future__ import annotations

import numpy as np
import pytest

from ecusum import _philox

# Random123 known-answer vectors for philox4x32-10
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    (
        (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
        (0xA4093822, 0x299F31D0),
        (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
    ),
]


class TestPhilox:
    @pytest.mark.parametrize("ctr,key,expected", KAT)
    def test_reference(self, ctr, key, expected):
        assert _philox.philox4x32_reference(ctr, key) == expected

    @pytest.mark.parametrize("ctr,key,expected", KAT)
    def test_compiled(self, ctr, key, expected):
        args = [np.uint64(c) for c in ctr] + [np.uint64(k) for k in key]
        assert tuple(int(v) for v in _philox.philox4x32(*args)) == expected

    def test_split_seed(self):
        assert _philox.split_seed(0x0000000100000002) == (2, 1)
        with pytest.raises(ValueError):
            _philox.split_seed(-1)

    def test_uniforms_in_unit_interval(self):
        k0, k1 = (np.uint64(w) for w in _philox.split_seed(7))
        u = np.array([_philox.uniform_at(np.uint64(j), np.uint64(1), np.uint64(3), k0, k1) for j in range(4000)])
        assert ((u > 0) & (u <= 1)).all()
        assert abs(u.mean() - 0.5) < 0.03

    def test_normals_moments(self):
        k0, k1 = (np.uint64(w) for w in _philox.split_seed(11))
        z = np.array([_philox.normal_at(np.uint64(j), np.uint64(0), k0, k1) for j in range(20000)])
        assert abs(z.mean()) < 0.05
        assert abs(z.std() - 1) < 0.05
