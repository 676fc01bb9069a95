import numpy as np
import pytest

from vac.errors import InvalidInputError
from vac.instances import TorusSpec, random_mdp, torus_mdp
from vac.io import dumps_mdp, dumps_trajectory, load_mdp, loads_mdp, loads_trajectory, save_mdp
from vac.model_free import generate_trajectory


def test_mdp_round_trip(tmp_path):
    for mdp in (random_mdp(4, 3, 0.9, 2), torus_mdp(TorusSpec(3, 4, 0.5))):
        save_mdp(mdp, tmp_path / "m.txt")
        back = load_mdp(tmp_path / "m.txt")
        np.testing.assert_array_equal(back.transitions, mdp.transitions)
        np.testing.assert_array_equal(back.rewards, mdp.rewards)
        assert back.gamma == mdp.gamma and back.digest() == mdp.digest()
    assert back.geometry.shape == (3, 4)


def test_mdp_rejects_bad_rows():
    text = dumps_mdp(random_mdp(2, 2, 0.9, 0)).splitlines()
    i = text.index("transitions") + 1
    text[i] = "0.5 0.6"
    with pytest.raises(InvalidInputError):
        loads_mdp("\n".join(text))
    with pytest.raises(InvalidInputError):
        loads_mdp("n_states 2\n")
    with pytest.raises(InvalidInputError):
        load_mdp("/nonexistent/file.txt")


def test_trajectory_round_trip(ring5):
    tr = generate_trajectory(ring5, np.full((5, 2), 0.5), 300, 9)
    back = loads_trajectory(dumps_trajectory(tr))
    np.testing.assert_array_equal(back.states, tr.states)
    np.testing.assert_array_equal(back.actions, tr.actions)
    np.testing.assert_array_equal(back.rewards, tr.rewards)
    np.testing.assert_array_equal(back.behavior, tr.behavior)
    assert (back.seed, back.mdp_digest) == (9, ring5.digest())
    header = dumps_trajectory(tr).splitlines()
    assert "t,s,a,r" in header


def test_trajectory_rejects_out_of_range(ring5):
    text = dumps_trajectory(generate_trajectory(ring5, np.full((5, 2), 0.5), 10, 0))
    lines = text.splitlines()
    lines[-1] = "10,7,0,1.0"
    with pytest.raises(InvalidInputError):
        loads_trajectory("\n".join(lines))
