"""Hot inner loops of the plant simulator.

Every function here is plain numpy/Python and gets compiled by numba unless
``PCS_MPC_DISABLE_NUMBA`` is set (see ``_jit``). Arguments are scalars and
float64 arrays only so both paths share one source.
"""
import numpy as np

from ._jit import jit

FREEZING = 0
MELTING = 1

# column layout of the per-inner-step output block written by ``integrate_zones``
COL_T_SH = 0
COL_T_DHW = 1
COL_BRANCH_SH = 2
COL_Q_SH = 3
COL_P_CH = 4
COL_P_DIS = 5
COL_E_SH = 6
COL_E_DHW = 7
COL_E_B = 8
COL_E_BLD = 9
COL_LOSS_SH = 10
COL_LOSS_DHW = 11
COL_COUPLING = 12
COL_DH_SH = 13
COL_DH_DHW = 14
N_COLS = 15


@jit
def branch_temperature(h, branch, T_melt, h_melt, T_freeze, h_freeze):
    """Temperature (°C) on the given hysteresis branch; saturates outside the table."""
    if branch == MELTING:
        return np.interp(h, h_melt, T_melt)
    return np.interp(h, h_freeze, T_freeze)


@jit
def branch_temperatures(h, branch, T_melt, h_melt, T_freeze, h_freeze):
    out = np.empty(h.shape[0])
    for i in range(h.shape[0]):
        out[i] = branch_temperature(h[i], branch[i], T_melt, h_melt, T_freeze, h_freeze)
    return out


@jit
def integrate_zones(
    n_inner, dt_h,
    h_sh, h_dhw, br_sh, br_dhw, e_b, e_bld,
    T_melt, h_melt, T_freeze, h_freeze,
    m_sh, m_dhw, h_ref_sh, h_ref_dhw,
    a_sh, a_dhw, c_dhw,
    a_b, b_ch, b_dis, e_b_max,
    q_hp_sh, q_hp_dhw, q_hr, q_sh_set, q_l_dhw, q_l_sh,
    p_ch, p_dis, t_supply_full, t_supply_zero,
    out,
):
    """Explicit forward integration of tank zones, building accumulator and battery.

    Set points and loads are held constant over the ``n_inner`` sub-steps.
    ``a_sh``/``a_dhw`` are per-sub-step retention factors of the zone energies,
    ``c_dhw`` the share of the upper-zone energy handed to the lower zone per
    sub-step. Battery coefficients are kWh per kW per sub-step.
    Returns the final ``(h_sh, h_dhw, br_sh, br_dhw, e_b, e_bld)``.
    """
    for k in range(n_inner):
        t_sh = branch_temperature(h_sh, br_sh, T_melt, h_melt, T_freeze, h_freeze)
        e_sh = m_sh * (h_sh - h_ref_sh) / 3600.0
        e_dhw = m_dhw * (h_dhw - h_ref_dhw) / 3600.0

        # floor-heating supply fades out once the lower zone is below usable temperature
        frac = (t_sh - t_supply_zero) / (t_supply_full - t_supply_zero)
        if frac > 1.0:
            frac = 1.0
        elif frac < 0.0:
            frac = 0.0
        q_sh = q_sh_set * frac

        loss_sh = (1.0 - a_sh) * e_sh
        outflow_dhw = (1.0 - a_dhw) * e_dhw
        coupling = c_dhw * e_dhw
        loss_dhw = outflow_dhw - coupling

        d_sh = (q_hp_sh - q_sh) * dt_h + coupling - loss_sh
        d_dhw = (q_hp_dhw + q_hr - q_l_dhw) * dt_h - coupling - loss_dhw

        dh_sh = d_sh * 3600.0 / m_sh
        dh_dhw = d_dhw * 3600.0 / m_dhw
        h_sh += dh_sh
        h_dhw += dh_dhw
        if dh_sh > 1e-12:
            br_sh = MELTING
        elif dh_sh < -1e-12:
            br_sh = FREEZING
        if dh_dhw > 1e-12:
            br_dhw = MELTING
        elif dh_dhw < -1e-12:
            br_dhw = FREEZING

        # battery with saturation at empty / full
        pc = p_ch
        pd = p_dis
        e_new = a_b * e_b + b_ch * pc - b_dis * pd
        if e_new > e_b_max:
            pc = (e_b_max - a_b * e_b + b_dis * pd) / b_ch
            if pc < 0.0:
                pc = 0.0
                pd = (a_b * e_b - e_b_max) / b_dis
            e_new = a_b * e_b + b_ch * pc - b_dis * pd
        elif e_new < 0.0:
            pd = (a_b * e_b + b_ch * pc) / b_dis
            if pd < 0.0:
                pd = 0.0
            e_new = a_b * e_b + b_ch * pc - b_dis * pd
        e_b = e_new

        e_bld += (q_sh - q_l_sh) * dt_h

        out[k, COL_T_SH] = branch_temperature(h_sh, br_sh, T_melt, h_melt, T_freeze, h_freeze)
        out[k, COL_T_DHW] = branch_temperature(h_dhw, br_dhw, T_melt, h_melt, T_freeze, h_freeze)
        out[k, COL_BRANCH_SH] = br_sh
        out[k, COL_Q_SH] = q_sh
        out[k, COL_P_CH] = pc
        out[k, COL_P_DIS] = pd
        out[k, COL_E_SH] = m_sh * (h_sh - h_ref_sh) / 3600.0
        out[k, COL_E_DHW] = m_dhw * (h_dhw - h_ref_dhw) / 3600.0
        out[k, COL_E_B] = e_b
        out[k, COL_E_BLD] = e_bld
        out[k, COL_LOSS_SH] = loss_sh
        out[k, COL_LOSS_DHW] = loss_dhw
        out[k, COL_COUPLING] = coupling
        out[k, COL_DH_SH] = d_sh
        out[k, COL_DH_DHW] = d_dhw
    return h_sh, h_dhw, br_sh, br_dhw, e_b, e_bld
