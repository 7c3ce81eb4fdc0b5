import numpy as np
import pytest

from hopplan.controller import ControllerGrid, ControllerHyper, gen_controller_dataset, train_controller
from hopplan.slip import HopperParams
from hopplan.terrain import flat


@pytest.fixture
def params():
    return HopperParams()


@pytest.fixture
def ground():
    return flat(0.0, mu=0.8)


@pytest.fixture(scope="session")
def controller_data():
    return gen_controller_dataset(ControllerGrid(), HopperParams())


@pytest.fixture(scope="session")
def trained_controller(controller_data):
    """Controller trained on the default grid; shared by every module that needs one."""
    ctrl, report = train_controller(controller_data, ControllerHyper(), rng=0)
    return ctrl, report


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# desk-scale planner network: 40 terrains x 4 start states, shared by the
# planner tests and the acceptance suite (several minutes on one core)
DESK_DATA = dict(n_terrains=40, states_per_terrain=4, seed=1)
DESK_EPOCHS = 12


@pytest.fixture(scope="session")
def desk_sequences():
    from hopplan.lstm_planner import DatasetGenConfig, build_training_set

    return build_training_set(DatasetGenConfig(**DESK_DATA), workers=1)


@pytest.fixture(scope="session")
def desk_training(desk_sequences):
    from hopplan.lstm_planner import LstmHyper, train_lstm

    return train_lstm(desk_sequences, LstmHyper(epochs=DESK_EPOCHS), rng=3)


@pytest.fixture(scope="session")
def desk_net(desk_training):
    return desk_training[0]


@pytest.fixture(scope="session")
def overfit_run():
    """Ten start-distinct sequences trained to memorisation: (net, seqs, report)."""
    from oracles import distinct_instances

    from hopplan.lstm_planner import DatasetGenConfig, LstmHyper, build_training_set, train_lstm

    pool = build_training_set(DatasetGenConfig(n_terrains=12, states_per_terrain=2, seed=4))
    seqs = distinct_instances(pool, 10)
    net, report = train_lstm(seqs, LstmHyper(epochs=200, batch=10, lr=5e-3, lr_final=1e-3), rng=0)
    return net, seqs, report
