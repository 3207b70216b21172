import numpy as np
import pytest

from streamrobust import (
    Explicit,
    Identity,
    OutlierDistribution,
    PointMass,
    RegressionModel,
    Spectrum,
    Uniform,
    no_outliers,
    point_outliers,
)


@pytest.fixture
def clean_model():
    return RegressionModel(np.array([0.6, -0.2, 0.3]), Identity(3), 1.0, no_outliers())


@pytest.fixture
def point_model():
    return RegressionModel(
        np.array([0.5, 0.5, -0.5, 0.5]), Identity(4), 1.0, point_outliers(0.25, 1000.0)
    )


@pytest.fixture
def mixture_model():
    return RegressionModel(
        np.array([-0.4, 1.1]),
        Explicit(np.array([[2.0, 0.3], [0.3, 1.0]])),
        1.3,
        OutlierDistribution(0.3, ((0.4, PointMass(5.0)), (0.6, Uniform(1.0, 10.0)))),
    )


@pytest.fixture
def spectrum_model():
    return RegressionModel(
        np.array([1.0, 0.0, -1.0]),
        Spectrum((1.0, 0.5, 1.0 / 3.0), basis_seed=11),
        1.0,
        point_outliers(0.5, 2.0),
    )
