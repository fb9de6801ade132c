import numpy as np
import pytest

from cadalign.objective import RcWeights
from cadalign.shape_tree import CadDatabase, build_tree
from cadalign.synth import make_models, make_scene


@pytest.fixture(scope="session")
def chair_models():
    return make_models({"chair": 8}, seed=1)


@pytest.fixture(scope="session")
def chair_db(chair_models):
    return CadDatabase(chair_models)


@pytest.fixture(scope="session")
def chair_tree(chair_models):
    return build_tree(chair_models, "chair")


@pytest.fixture(scope="session")
def multi_db():
    models = make_models({"chair": 6, "table": 6, "cabinet": 6, "sofa": 6}, seed=3)
    return CadDatabase(models)


@pytest.fixture(scope="session")
def multi_trees(multi_db):
    return {
        label: build_tree(multi_db.by_class(label), label) for label in multi_db.classes
    }


@pytest.fixture(scope="session")
def small_scene(chair_db):
    return make_scene(chair_db, seed=11, n_objects=2, n_views=3, classes=["chair"], width=160, height=120)


@pytest.fixture(scope="session")
def weights():
    return RcWeights()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
