import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from ddurso.baseline import override

bits = st.lists(st.integers(0, 1), min_size=1, max_size=12)


def test_override_identities():
    u = np.array([0, 1, 0, 1])
    assert override(u, np.zeros(4)).tolist() == u.tolist()
    assert override(u, np.ones(4)).tolist() == [1, 1, 1, 1]


@given(data=st.data(), u=bits)
def test_override_properties(data, u):
    u = np.array(u)
    x = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(u), max_size=len(u))))
    v = override(u, x)
    assert set(np.unique(v)) <= {0, 1}
    assert np.all(v >= x)
    assert np.all(v >= u * (1 - x))
    assert np.array_equal(v, np.maximum(u, x))
