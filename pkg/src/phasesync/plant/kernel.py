"""Compiled multirate step loop.

One call advances the two-arm system by a block of fine steps.  All state
lives in flat arrays owned by the caller, so consecutive blocks continue
exactly where the previous one stopped.

Rates: the fast loops and AOM phases advance every fine step, the local
loops every ``dec_loc`` steps, the SNSPD bins and global loop every
``dec_glob`` steps.  Slowly varying inputs (fiber drift, midpoint drift,
clock phase) arrive at the global rate with one extra sample and are
interpolated linearly inside each bin.
"""

import numba
import numpy as np

from ..control import (CTRL_STATE, OFFLOAD_STATE, controller_update, offload_update,
                       pfd_accumulate)

TWO_PI = 2 * np.pi

# per-arm state layout
A_LOC = 0  # local AOM phase
U_LOC = 1  # local command being applied (Hz)
U_LOC_NEXT = 2  # command computed at the last local step
M_LOC = 3  # last unwrapped local measurement
A_FAST = 4
U_FAST = 5  # fast command being applied
PFD = 6
M_FAST_PREV = 7
PUMP = 8  # pump phase from offload corrections
PUMP_CORR = 9  # current pump frequency correction (Hz)
PFD_SAT = 10  # fine steps with the PFD on a rail
AOM_SAT = 11  # fine steps with the fast AOM clamped
LOC_SAT = 12
FIRST_UNLOCK = 13  # fine-step index of the first PFD saturation, -1 if none
CTRL_LOC = 14
CTRL_FAST = CTRL_LOC + CTRL_STATE
OFFLOAD = CTRL_FAST + CTRL_STATE
ARM_STATE = OFFLOAD + OFFLOAD_STATE

# global state layout
G_PHASE = 0  # setpoint offset written into fast loop A (rad)
G_CMD = 1  # global command (Hz)
G_I1 = 2
G_I2 = 3
G_Q1 = 4
G_Q2 = 5
G_BEAT = 6  # bin accumulator of the SNSPD beat
G_FRINGE = 7  # bin accumulator of cos(eta_total)
G_CLOCK = 8  # beat clock phase at the current step
G_PSI = 9  # last demodulated global phase
G_COMB_POS = 10  # write index of the quadrature comb buffers
COMB_MAX = 64
G_COMB_I = 11
G_COMB_Q = G_COMB_I + COMB_MAX
G_COMB_FILL = G_COMB_Q + COMB_MAX  # bins seen, saturating at the comb length
G_STATE = G_COMB_FILL + 1

# recorded channels
RECORD_CHANNELS = (
    "t", "eta_local_A", "eta_local_B", "eta_fast_A", "eta_fast_B", "eta_global", "eta_total",
    "theta_glob", "meas_local_A", "meas_local_B", "meas_fast_A", "meas_fast_B",
    "cmd_local_A", "cmd_local_B", "cmd_fast_A", "cmd_fast_B", "pump_corr_A", "pump_corr_B",
    "fiber_phase_A", "fiber_phase_B", "theta_err_A", "theta_err_B", "global_setpoint",
)
N_REC = len(RECORD_CHANNELS)
COUNT_CHANNELS = ("snspd_1", "snspd_2", "fringe_1", "fringe_2", "global_psi")

# flags
F_LOC_A, F_LOC_B, F_FAST_A, F_FAST_B, F_GLOB, F_OFF_A, F_OFF_B, F_SHOT, F_DARK = range(9)

# float parameters
P_DT = 0
P_F_GLOB = 1
P_OMEGA_TOT = 2
P_THETA_OFFSET = 3
P_GLOB_GAIN = 4
P_GLOB_ALPHA = 5
P_SNSPD_RATE = 6
P_SNSPD_VIS = 7
P_FRINGE_RATE = 8
P_FRINGE_VIS = 9
P_RANGE_LOC = 10
P_RANGE_FAST = 11
P_OFF_RATE = 12
P_DARK_FRACTION = 13
N_PARAMS = 14

# integer parameters
I_DEC_LOC = 0
I_DEC_GLOB = 1
I_REC_STRIDE = 2
I_OFF_LINK = 3
I_OFF_DELAY = 4
I_DARK_PERIOD = 5  # fine steps per dark-period cycle
I_COMB = 6  # bins in the quadrature boxcar, a whole number of beat periods
N_IPARAMS = 7


@numba.njit(cache=True)
def seed_rng(seed):
    np.random.seed(seed)


@numba.njit(cache=True)
def _clamp(x, limit):
    if x > limit:
        return limit, True
    if x < -limit:
        return -limit, True
    return x, False


@numba.njit(cache=True)
def _wrap(x):
    return -((-x + np.pi) % TWO_PI - np.pi)


@numba.njit(cache=True)
def _clock_phase(f, t):
    if f <= 0:
        return 0.0
    return TWO_PI * f * (t % (1.0 / f))


@numba.njit(cache=True)
def run_block(step0, n_fine, p, ip, flags, ploc, pfast, arm, gs,
              las, ref, detf, injf, node, detl, injl, vib,
              fib, therr, thglob, mid, rec, counts):
    """Advance ``n_fine`` fine steps starting at global fine index ``step0``.

    Arrays with a leading axis of 2 are per arm (A, B).  ``rec`` receives one
    row every ``rec_stride`` steps, ``counts`` one row per global bin.
    """
    dt = p[P_DT]
    dec_loc = ip[I_DEC_LOC]
    dec_glob = ip[I_DEC_GLOB]
    stride = ip[I_REC_STRIDE]
    t_glob = dec_glob * dt
    k_rec = 0
    dark_len = int(p[P_DARK_FRACTION] * ip[I_DARK_PERIOD])
    s7 = np.zeros(2)
    z7 = np.zeros(2)
    eta_loc = np.zeros(2)
    eta_fast = np.zeros(2)
    m_fast = np.zeros(2)
    for i in range(n_fine):
        s = step0 + i
        t = s * dt
        j = i // dec_loc
        gb = i // dec_glob
        frac = (i % dec_glob) / dec_glob
        th_g = thglob[gb] + frac * (thglob[gb + 1] - thglob[gb])
        dark = flags[F_DARK] != 0 and (s % ip[I_DARK_PERIOD]) < dark_len

        # local loops: sample, compute, hand the command over with one step delay
        if i % dec_loc == 0:
            for x in range(2):
                m = node[x, j] + arm[x, A_LOC] + detl[x, j]
                arm[x, M_LOC] = m
                arm[x, U_LOC] = arm[x, U_LOC_NEXT]
                if flags[F_LOC_A + x] != 0:
                    c = controller_update(ploc[x], arm[x, CTRL_LOC:CTRL_LOC + CTRL_STATE], -_wrap(m))
                else:
                    c = 0.0
                c, sat = _clamp(c + injl[x, j], p[P_RANGE_LOC])
                if sat:
                    arm[x, LOC_SAT] += 1
                arm[x, U_LOC_NEXT] = c

        for x in range(2):
            fibx = fib[x, gb] + frac * (fib[x, gb + 1] - fib[x, gb])
            thx = therr[x, gb] + frac * (therr[x, gb + 1] - therr[x, gb])
            midx = mid[x, gb] + frac * (mid[x, gb + 1] - mid[x, gb])
            sp = gs[G_PHASE] if x == 0 else 0.0
            s6 = las[x, i] + vib[x, j] + fibx + arm[x, A_FAST] - arm[x, PUMP]
            eta_fast[x] = s6 - ref[i] - sp
            eta_loc[x] = node[x, j] + arm[x, A_LOC]
            s7[x] = s6 + midx
            z7[x] = s7[x] + eta_loc[x] - thx
            m_fast[x] = eta_fast[x] + detf[x, i]

        eta_total = z7[0] - z7[1] + TWO_PI * p[P_OMEGA_TOT] * t + p[P_THETA_OFFSET]
        eta_glob = (s7[0] - s7[1]) - (eta_fast[0] - eta_fast[1]) - th_g
        # clock phase from the step index, the same expression the demodulator uses
        gs[G_CLOCK] = _clock_phase(p[P_F_GLOB], t)
        gs[G_BEAT] += np.cos(gs[G_CLOCK] + s7[0] - s7[1])
        gs[G_FRINGE] += np.cos(eta_total)

        if i % stride == 0:
            r = rec[k_rec]
            r[0] = t
            r[1] = eta_loc[0]
            r[2] = eta_loc[1]
            r[3] = eta_fast[0]
            r[4] = eta_fast[1]
            r[5] = eta_glob
            r[6] = eta_total
            r[7] = th_g
            r[8] = arm[0, M_LOC]
            r[9] = arm[1, M_LOC]
            r[10] = m_fast[0]
            r[11] = m_fast[1]
            r[12] = arm[0, U_LOC]
            r[13] = arm[1, U_LOC]
            r[14] = arm[0, U_FAST]
            r[15] = arm[1, U_FAST]
            r[16] = arm[0, PUMP_CORR]
            r[17] = arm[1, PUMP_CORR]
            r[18] = fib[0, gb] + frac * (fib[0, gb + 1] - fib[0, gb])
            r[19] = fib[1, gb] + frac * (fib[1, gb + 1] - fib[1, gb])
            r[20] = therr[0, gb] + frac * (therr[0, gb + 1] - therr[0, gb])
            r[21] = therr[1, gb] + frac * (therr[1, gb + 1] - therr[1, gb])
            r[22] = gs[G_PHASE]
            k_rec += 1

        # fast loops: PFD, PI, AOM with one-step delay, desaturation offload
        for x in range(2):
            acc, railed = pfd_accumulate(arm[x, PFD], m_fast[x] - arm[x, M_FAST_PREV])
            arm[x, PFD] = acc
            arm[x, M_FAST_PREV] = m_fast[x]
            if railed and flags[F_FAST_A + x] != 0:
                arm[x, PFD_SAT] += 1
                if arm[x, FIRST_UNLOCK] < 0:
                    arm[x, FIRST_UNLOCK] = s
            arm[x, A_FAST] += TWO_PI * arm[x, U_FAST] * dt
            if flags[F_FAST_A + x] != 0:
                if dark:
                    c = arm[x, CTRL_FAST + 2]
                else:
                    c = controller_update(pfast[x], arm[x, CTRL_FAST:CTRL_FAST + CTRL_STATE], -acc)
            else:
                c = 0.0
            c, sat = _clamp(c + injf[x, i], p[P_RANGE_FAST])
            if sat:
                arm[x, AOM_SAT] += 1
            arm[x, U_FAST] = c
            if flags[F_OFF_A + x] != 0:
                corr = offload_update(arm[x, OFFLOAD:OFFLOAD + OFFLOAD_STATE], c, s, ip[I_OFF_LINK],
                                      ip[I_OFF_DELAY], p[P_OFF_RATE], dt)
                arm[x, PUMP_CORR] = corr
            # a pump shift of +df moves the converted light by -df
            arm[x, PUMP] += TWO_PI * arm[x, PUMP_CORR] * dt
            arm[x, A_LOC] += TWO_PI * arm[x, U_LOC] * dt

        gs[G_PHASE] += TWO_PI * gs[G_CMD] * dt

        # end of an SNSPD bin: counts, I/Q demodulation, proportional command
        if (i + 1) % dec_glob == 0:
            mean_beat = gs[G_BEAT] / dec_glob
            mean_fringe = gs[G_FRINGE] / dec_glob
            gs[G_BEAT] = 0.0
            gs[G_FRINGE] = 0.0
            half = 0.5 * t_glob
            lam1 = half * p[P_SNSPD_RATE] * (1.0 + p[P_SNSPD_VIS] * mean_beat)
            lam2 = half * p[P_SNSPD_RATE] * (1.0 - p[P_SNSPD_VIS] * mean_beat)
            fr1 = half * p[P_FRINGE_RATE] * (1.0 + p[P_FRINGE_VIS] * mean_fringe)
            fr2 = half * p[P_FRINGE_RATE] * (1.0 - p[P_FRINGE_VIS] * mean_fringe)
            if flags[F_SHOT] != 0:
                c1 = float(np.random.poisson(max(lam1, 0.0)))
                c2 = float(np.random.poisson(max(lam2, 0.0)))
                f1 = float(np.random.poisson(max(fr1, 0.0)))
                f2 = float(np.random.poisson(max(fr2, 0.0)))
            else:
                c1, c2, f1, f2 = lam1, lam2, fr1, fr2
            # clock phase at the bin centre
            t_mid = (s + 0.5 - 0.5 * dec_glob) * dt  # centre of steps s - dec + 1 .. s
            phi_c = _clock_phase(p[P_F_GLOB], t_mid) + thglob[gb] + 0.5 * (thglob[gb + 1] - thglob[gb])
            d = c1 - c2
            # boxcar over whole beat periods nulls the 2 w_glob mixing product
            nc = ip[I_COMB]
            pos = int(gs[G_COMB_POS])
            gs[G_COMB_I + pos] = d * np.cos(phi_c)
            gs[G_COMB_Q + pos] = -d * np.sin(phi_c)
            gs[G_COMB_POS] = (pos + 1) % nc
            xi = 0.0
            xq = 0.0
            for j in range(nc):
                xi += gs[G_COMB_I + j]
                xq += gs[G_COMB_Q + j]
            xi /= nc
            xq /= nc
            # the lowpass and the loop wait until the comb holds whole periods
            if gs[G_COMB_FILL] < nc:
                gs[G_COMB_FILL] += 1
            if gs[G_COMB_FILL] >= nc:
                a = p[P_GLOB_ALPHA]
                gs[G_I1] += a * (xi - gs[G_I1])
                gs[G_I2] += a * (gs[G_I1] - gs[G_I2])
                gs[G_Q1] += a * (xq - gs[G_Q1])
                gs[G_Q2] += a * (gs[G_Q1] - gs[G_Q2])
            psi = np.arctan2(gs[G_Q2], gs[G_I2])
            gs[G_PSI] = psi
            if flags[F_GLOB] != 0:
                gs[G_CMD] = p[P_GLOB_GAIN] * (-psi)
            else:
                gs[G_CMD] = 0.0
            counts[gb, 0] = c1
            counts[gb, 1] = c2
            counts[gb, 2] = f1
            counts[gb, 3] = f2
            counts[gb, 4] = psi
    return k_rec


def new_arm_state():
    arm = np.zeros((2, ARM_STATE))
    arm[:, FIRST_UNLOCK] = -1.0
    return arm


def new_global_state():
    return np.zeros(G_STATE)
