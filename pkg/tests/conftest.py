import numpy as np
import pytest

from igamotor.assembly import (
    assemble_coupling,
    assemble_rhs,
    assemble_stiffness,
    assemble_winding_vector,
    build_reluctivity_map,
)
from igamotor.coupling import CouplingBlocks, harmonic_orders
from igamotor.geometry import MachineConfig, build_demo_machine, build_dof_map


def coarse_config(**overrides):
    base = dict(refinement=0, n_harmonics=12, n_angles=12)
    base.update(overrides)
    return MachineConfig(**base)


@pytest.fixture(scope="session")
def coarse_cfg():
    return coarse_config()


@pytest.fixture(scope="session")
def coarse_machine(coarse_cfg):
    return build_demo_machine(coarse_cfg)


@pytest.fixture(scope="session")
def coarse_dofmaps(coarse_machine):
    stator, rotor = coarse_machine
    return build_dof_map(stator), build_dof_map(rotor)


@pytest.fixture(scope="session")
def coarse_blocks(coarse_cfg, coarse_machine, coarse_dofmaps):
    stator, rotor = coarse_machine
    dm_st, dm_rt = coarse_dofmaps
    orders = harmonic_orders(coarse_cfg.n_harmonics)
    K_st = assemble_stiffness(stator, dm_st, build_reluctivity_map(stator, coarse_cfg))
    K_rt = assemble_stiffness(rotor, dm_rt, build_reluctivity_map(rotor, coarse_cfg))
    G_st = assemble_coupling(stator, dm_st, orders)
    G_rt = assemble_coupling(rotor, dm_rt, orders)
    j_st = assemble_rhs(stator, dm_st, coarse_cfg, t=0.0)
    j_rt = assemble_rhs(rotor, dm_rt, coarse_cfg)
    return CouplingBlocks(K_st, K_rt, G_st, G_rt, j_st, j_rt, orders)


@pytest.fixture(scope="session")
def coarse_winding(coarse_cfg, coarse_machine, coarse_dofmaps):
    stator, _ = coarse_machine
    dm_st, _ = coarse_dofmaps
    return assemble_winding_vector(stator, dm_st, coarse_cfg, phase=1)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
