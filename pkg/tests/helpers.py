"""
Shared fixtures: a hand-certified solution of the 1D integrator and a small
2D game whose Euler successors land on grid nodes.
"""

import numpy as np

from config.loader import ConfigLoader
from core.polynomial import parse_polynomial
from core.reach_avoid import Certificate, Solution, Stage, init_final_stage
from systems import integrator_1d

X = ("x",)
LINEAR = [(0,), (1,)]
CONSTANT = [(0,)]

GAME_2D = """
name: grid_game
dynamics:
  states: [x, y]
  controls: [u]
  disturbances: [d]
  f: ["u", "d"]
target: "x^2 + y^2 - 0.25"
avoid: "x^2 + (y - 1)^2 - 0.01"
control_set: ["u - 1", "-u - 1"]
disturbance_set: ["d^2 - 1"]
roi: {lower: [-1.0, -1.0], upper: [1.0, 1.0]}
time_grid: {start: -1.0, steps: 2}
hyperparameters:
  deg_V: 4
verification:
  oracle_resolution: 5
"""


def poly(text):
    return parse_polynomial(text, X)


def _cert(basis, gram):
    return Certificate(list(basis), np.array(gram, dtype=float))


def certified_integrator_solution(setup=None):
    """
    Stages for x' = u, |u| <= 1, |x| <= 0.5 target, two steps of 0.5:
    stage 1 is |x| <= 0.75 and stage 0 is |x| <= 1, both with K(x) = -x.
    Multipliers and Gram matrices make every row an exact identity.
    """
    setup = setup or integrator_1d.build()
    final = init_final_stage(setup)
    stage1 = Stage(
        index=1,
        time=-0.5,
        V=poly("x^2"),
        rho=0.5625,
        K=[poly("-x")],
        multipliers={
            "lyap_R": poly("-2"),
            "ca_A": poly("0.5625"),
            "ctrl_R.0": poly("1"),
            "ctrl_R.1": poly("1"),
            "it_T": poly("2"),
        },
        certificates={
            "lyap": _cert(CONSTANT, [[0.5]]),
            "ca": _cert(LINEAR, [[0.0, 0.0], [0.0, 1.0]]),
            "ctrl.0": _cert(LINEAR, [[0.4375, 0.5], [0.5, 1.0]]),
            "ctrl.1": _cert(LINEAR, [[0.4375, -0.5], [-0.5, 1.0]]),
            "it": _cert(LINEAR, [[0.0625, 0.0], [0.0, 1.0]]),
            "V.sos": _cert(LINEAR, [[0.0, 0.0], [0.0, 1.0]]),
            "ca_A.sos": _cert(CONSTANT, [[0.5625]]),
            "ctrl_R.0.sos": _cert(CONSTANT, [[1.0]]),
            "ctrl_R.1.sos": _cert(CONSTANT, [[1.0]]),
            "it_T.sos": _cert(CONSTANT, [[2.0]]),
        },
    )
    stage0 = Stage(
        index=0,
        time=-1.0,
        V=poly("x^2"),
        rho=1.0,
        K=[poly("-x")],
        multipliers={
            "lyap_R": poly("-2"),
            "ca_A": poly("1"),
            "ctrl_R.0": poly("0.5"),
            "ctrl_R.1": poly("0.5"),
            "it_T": poly("1"),
        },
        certificates={
            "lyap": _cert(CONSTANT, [[1.125]]),
            "ca": _cert(LINEAR, [[0.0, 0.0], [0.0, 1.0]]),
            "ctrl.0": _cert(LINEAR, [[0.5, 0.5], [0.5, 0.5]]),
            "ctrl.1": _cert(LINEAR, [[0.5, -0.5], [-0.5, 0.5]]),
            "it": _cert(CONSTANT, [[0.4375]]),
            "V.sos": _cert(LINEAR, [[0.0, 0.0], [0.0, 1.0]]),
            "ca_A.sos": _cert(CONSTANT, [[1.0]]),
            "ctrl_R.0.sos": _cert(CONSTANT, [[0.5]]),
            "ctrl_R.1.sos": _cert(CONSTANT, [[0.5]]),
            "it_T.sos": _cert(CONSTANT, [[1.0]]),
        },
    )
    return Solution(setup=setup, stages={2: final, 1: stage1, 0: stage0}, complete=True)


def grid_game_setup():
    return ConfigLoader().parse_setup(GAME_2D)
