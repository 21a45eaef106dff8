"""Hot simulation kernels over packed state arrays.

State is packed as three arrays indexed by host: ``access`` (int8 code),
``running`` and ``scanned`` (int64 service bitmasks). All functions here are
numba-compilable (see :mod:`cage2pomdp._accel`) and take scenario lookup
tables as plain arrays. Randomness enters only through pre-drawn uniforms so
the compiled and interpreted paths are bit-identical.

Per-step order: the defender phase rewrites the state in place, the attacker
strategy picks an action from that intermediate state, the attacker phase
applies it, and the observation is produced from the resulting state plus
both actions. Host-exposure conditions (the H->K cases) are evaluated on the
intermediate state before the attacker's targeted write, matching the
two-phase transition semantics exactly.
"""

import numpy as np

from ._accel import maybe_jit

# attacker access state codes (order matters: U..I are the "compromised" range)
A_H, A_K, A_S, A_U, A_R, A_P, A_I = 0, 1, 2, 3, 4, 5, 6
ACCESS_LETTERS = "HKSURPI"

# per-host observation codes
O_H, O_S, O_C, O_P, O_U, O_N = 0, 1, 2, 3, 4, 5
OBS_LETTERS = "HSCPUN"

# defender action kinds
D_IDLE, D_ANALYSE, D_DECOY, D_NEUTRALISE, D_RESTORE = 0, 1, 2, 3, 4

# attacker action kinds
ATK_DISCOVER, ATK_SCAN, ATK_EXPLOIT, ATK_ESCALATE, ATK_INTERRUPT = 0, 1, 2, 3, 4

# service access grants t(h,e); T_ABSENT doubles as "not a real service"
T_ABSENT, T_NONE, T_USER, T_SUPER = 0, 1, 2, 3

# particle-filter refill modes
FILTER_OK, FILTER_PARTIAL, FILTER_NEAREST = 0, 1, 2


@maybe_jit
def defender_phase(access, running, d_kind, d_host, d_service, ehost_mask):
    """Apply the defender action in place. Scanned sets are never touched."""
    if d_kind == D_NEUTRALISE:
        if access[d_host] == A_U:
            access[d_host] = A_S
    elif d_kind == D_RESTORE:
        a = access[d_host]
        if a == A_U or a == A_R or a == A_P or a == A_I:
            access[d_host] = A_S
        running[d_host] = ehost_mask[d_host]
    elif d_kind == D_DECOY:
        running[d_host] = running[d_host] | (np.int64(1) << d_service)
    # idle / analyse leave the state unchanged


@maybe_jit
def attacker_phase(access, running, scanned, a_kind, a_target, a_service,
                   subnet_of, gm, taccess, entry_subnet, scratch):
    """Apply the attacker action in place.

    ``a_target`` is a subnet id for Discover and a host index otherwise.
    ``scratch`` is an int8[n] work buffer for the exposure pass. Running
    services are never touched.
    """
    n = access.shape[0]

    # H->K exposures, evaluated on the pre-attack state: subnet sweep of the
    # entry subnet, subnet sweep backed by a rooted host in that subnet, and
    # connectivity from any host the attacker already controls.
    for h in range(n):
        scratch[h] = 0
        if access[h] != A_H:
            continue
        if a_kind == ATK_DISCOVER and subnet_of[h] == a_target:
            if a_target == entry_subnet:
                scratch[h] = 1
            else:
                for h2 in range(n):
                    if subnet_of[h2] == a_target and (
                            access[h2] == A_P or access[h2] == A_I):
                        scratch[h] = 1
                        break
        if scratch[h] == 0:
            for h2 in range(n):
                if access[h2] == A_P and gm[h2] == h:
                    scratch[h] = 1
                    break

    if a_kind == ATK_SCAN:
        h = a_target
        if access[h] == A_K:
            access[h] = A_S
            scanned[h] = running[h]
        elif access[h] != A_H:
            # re-scan of an already-scanned host refreshes service knowledge;
            # scanning an undiscovered host yields nothing
            scanned[h] = running[h]
    elif a_kind == ATK_EXPLOIT:
        h = a_target
        if access[h] == A_S:
            t = taccess[h, a_service]
            if t == T_USER:
                access[h] = A_U
            elif t == T_SUPER:
                access[h] = A_R
            # decoy (absent) or non-exploitable service: exploit fails
    elif a_kind == ATK_ESCALATE:
        h = a_target
        if access[h] == A_U or access[h] == A_R:
            access[h] = A_P
    elif a_kind == ATK_INTERRUPT:
        h = a_target
        if access[h] == A_P:
            access[h] = A_I

    for h in range(n):
        if scratch[h] == 1:
            access[h] = A_K


@maybe_jit
def observe_phase(access, a_kind, a_target, d_kind, d_host, nd, out_obs):
    """Fill ``out_obs`` from the post-step state and the two previous actions.

    Cases are checked in fixed precedence order; ``nd`` is the step's
    detection draw (1 = the IDS flags the exploit attempt).
    """
    attacker_on_host = a_kind == ATK_SCAN or a_kind == ATK_EXPLOIT
    for h in range(access.shape[0]):
        a = access[h]
        if a == A_H or a == A_K:
            out_obs[h] = O_H
        elif attacker_on_host and a_target == h and a_kind == ATK_SCAN:
            out_obs[h] = O_S
        elif attacker_on_host and a_target == h and nd == 0:
            out_obs[h] = O_S
        elif attacker_on_host and a_target == h:
            out_obs[h] = O_C
        elif d_kind == D_NEUTRALISE and d_host == h:
            out_obs[h] = O_U
        elif d_kind == D_RESTORE and d_host == h:
            out_obs[h] = O_N
        elif d_kind == D_ANALYSE and d_host == h and (a == A_U or a == A_R):
            out_obs[h] = O_C
        elif d_kind == D_ANALYSE and d_host == h and (a == A_P or a == A_I):
            out_obs[h] = O_P
        else:
            out_obs[h] = O_N


@maybe_jit
def reward_of(access, d_kind, action_cost, host_subnet_cost, host_interrupt_cost):
    """Action cost plus per-host compromise and interruption penalties."""
    r = action_cost[d_kind]
    for h in range(access.shape[0]):
        a = access[h]
        if a >= A_U:
            r += host_subnet_cost[h]
            if a == A_I:
                r += host_interrupt_cost[h]
    return r


@maybe_jit
def select_exploit(scanned_mask, priority):
    """Highest-priority service present in a scanned-service bitmask, or -1."""
    for k in range(priority.shape[0]):
        e = priority[k]
        if scanned_mask & (np.int64(1) << e):
            return e
    return -1


@maybe_jit
def select_exploit_uniform(scanned_mask, n_services, u):
    """Uniformly random service from a scanned-service bitmask, or -1."""
    cnt = 0
    for e in range(n_services):
        if scanned_mask & (np.int64(1) << e):
            cnt += 1
    if cnt == 0:
        return -1
    k = int(u * cnt)
    if k >= cnt:
        k = cnt - 1
    i = 0
    for e in range(n_services):
        if scanned_mask & (np.int64(1) << e):
            if i == k:
                return e
            i += 1
    return -1


@maybe_jit
def _advance_host(access, scanned, h, target, priority, n_services,
                  sel_uniform, u):
    """One attack step pushing host ``h`` toward privileged access."""
    a = access[h]
    if a == A_K:
        return ATK_SCAN, h, -1
    if a == A_S:
        if sel_uniform == 1:
            e = select_exploit_uniform(scanned[h], n_services, u)
        else:
            e = select_exploit(scanned[h], priority)
        if e < 0:
            return ATK_SCAN, h, -1
        return ATK_EXPLOIT, h, e
    if a == A_U or a == A_R:
        return ATK_ESCALATE, h, -1
    if h == target and (a == A_P or a == A_I):
        return ATK_INTERRUPT, h, -1
    # already privileged: hold until the connectivity exposure lands
    return ATK_ESCALATE, h, -1


@maybe_jit
def bline_action_kernel(access, scanned, subnet_of, gm, priority, n_services,
                        target, entry_subnet, sel_uniform, u):
    """Shortest-path attacker: walk the connectivity chain toward the target.

    Deterministic function of the state (``u`` is consumed only in uniform
    exploit-selection mode). Resolves the current goal host by following
    feeder/bridge links backwards until an actionable host is found.
    """
    n = access.shape[0]
    goal = target
    for _depth in range(n + 1):
        if access[goal] != A_H:
            return _advance_host(access, scanned, goal, target, priority,
                                 n_services, sel_uniform, u)
        z = subnet_of[goal]
        if z == entry_subnet:
            return ATK_DISCOVER, z, -1
        # a rooted host inside the goal's subnet lets a sweep expose it
        for h in range(n):
            if subnet_of[h] == z and (access[h] == A_P or access[h] == A_I):
                return ATK_DISCOVER, z, -1
        # otherwise push the most advanced visible host of that subnet to root
        best = -1
        best_rank = -1
        for h in range(n):
            if subnet_of[h] == z and access[h] != A_H:
                if access[h] > best_rank:
                    best_rank = access[h]
                    best = h
        if best >= 0:
            return _advance_host(access, scanned, best, target, priority,
                                 n_services, sel_uniform, u)
        # no foothold in the subnet yet: climb through a bridge host whose
        # connectivity lands there (recurse one level down the chain)
        bridge = -1
        best_rank = -1
        for h in range(n):
            t2 = gm[h]
            if t2 >= 0 and subnet_of[t2] == z:
                if access[h] > best_rank:
                    best_rank = access[h]
                    bridge = h
        if bridge < 0:
            return ATK_DISCOVER, entry_subnet, -1
        goal = bridge
    return ATK_DISCOVER, entry_subnet, -1


@maybe_jit
def meander_action_kernel(access, scanned, subnet_of, gm, priority, n_services,
                          target, entry_subnet, subnet_ids, sel_uniform, u):
    """Breadth-first attacker: sweep subnets, then root known hosts in random
    order, interrupting the target once privileged."""
    n = access.shape[0]
    at = access[target]
    if at == A_P or at == A_I:
        return ATK_INTERRUPT, target, -1

    # discover any sweepable subnet that still hides hosts
    for zi in range(subnet_ids.shape[0]):
        z = subnet_ids[zi]
        hidden = False
        rooted = False
        for h in range(n):
            if subnet_of[h] == z:
                a = access[h]
                if a == A_H:
                    hidden = True
                elif a == A_P or a == A_I:
                    rooted = True
        if hidden and (z == entry_subnet or rooted):
            return ATK_DISCOVER, z, -1

    # advance a uniformly chosen known host that is not yet rooted
    cnt = 0
    for h in range(n):
        a = access[h]
        if a == A_K or a == A_S or a == A_U or a == A_R:
            cnt += 1
    if cnt == 0:
        # everything known is rooted: hold until an exposure lands
        for h in range(n):
            if access[h] == A_P or access[h] == A_I:
                return ATK_ESCALATE, h, -1
        return ATK_DISCOVER, entry_subnet, -1
    k = int(u * cnt)
    if k >= cnt:
        k = cnt - 1
    i = 0
    for h in range(n):
        a = access[h]
        if a == A_K or a == A_S or a == A_U or a == A_R:
            if i == k:
                # the fractional remainder of the host draw is an independent
                # uniform, reused for uniform exploit selection
                u2 = u * cnt - k
                return _advance_host(access, scanned, h, target, priority,
                                     n_services, sel_uniform, u2)
            i += 1
    return ATK_DISCOVER, entry_subnet, -1


@maybe_jit
def step_state_kernel(access, running, scanned, d_kind, d_host, d_service,
                      attacker_id, u_attacker, u_detect, p_detect, out_obs,
                      scratch, subnet_of, gm, ehost_mask, taccess, priority,
                      n_services, target, entry_subnet, subnet_ids,
                      sel_uniform):
    """Full step in place: defender phase, attacker decision + phase,
    observation. Returns the attacker action triple (kind, target, service)."""
    defender_phase(access, running, d_kind, d_host, d_service, ehost_mask)
    if attacker_id == 0:
        ak, at, ae = bline_action_kernel(access, scanned, subnet_of, gm,
                                         priority, n_services, target,
                                         entry_subnet, sel_uniform, u_attacker)
    else:
        ak, at, ae = meander_action_kernel(access, scanned, subnet_of, gm,
                                           priority, n_services, target,
                                           entry_subnet, subnet_ids,
                                           sel_uniform, u_attacker)
    attacker_phase(access, running, scanned, ak, at, ae, subnet_of, gm,
                   taccess, entry_subnet, scratch)
    nd = 1 if u_detect < p_detect else 0
    observe_phase(access, ak, at, d_kind, d_host, nd, out_obs)
    return ak, at, ae


@maybe_jit
def _regen_candidate(pa, pr, ps, i, u, wa, wr, ws, d_kind, d_host, d_service,
                     attacker_id, p_detect, cand_obs, scratch, subnet_of, gm,
                     ehost_mask, taccess, priority, n_services, target,
                     entry_subnet, subnet_ids, sel_uniform):
    """Deterministically rebuild filter candidate ``i`` into the work arrays."""
    m_in = pa.shape[0]
    n = pa.shape[1]
    j = int(u[i, 0] * m_in)
    if j >= m_in:
        j = m_in - 1
    for h in range(n):
        wa[h] = pa[j, h]
        wr[h] = pr[j, h]
        ws[h] = ps[j, h]
    step_state_kernel(wa, wr, ws, d_kind, d_host, d_service, attacker_id,
                      u[i, 1], u[i, 2], p_detect, cand_obs, scratch,
                      subnet_of, gm, ehost_mask, taccess, priority,
                      n_services, target, entry_subnet, subnet_ids,
                      sel_uniform)


@maybe_jit
def filter_update_kernel(pa, pr, ps, d_kind, d_host, d_service, obs,
                         attacker_id, p_detect, u, refill_u, out_a, out_r,
                         out_s, cand_obs, scratch, wa, wr, ws, mismatches,
                         best_rows, subnet_of, gm, ehost_mask, taccess,
                         priority, n_services, target, entry_subnet,
                         subnet_ids, sel_uniform):
    """Rejection-sampling particle update over packed particle arrays.

    Draws candidates from the input particles via ``u`` rows (particle pick,
    attacker uniform, detection uniform), keeps those whose simulated
    observation equals ``obs`` exactly, and stops at M accepted. On budget
    exhaustion: a partially filled set is topped up by resampling the
    accepted particles with ``refill_u``; an empty set is rebuilt from the
    candidates with the fewest mismatched host observations (the same
    candidates, regenerated from the same uniforms).

    Returns (raw accepted count, attempts used, refill mode).
    """
    m_out = out_a.shape[0]
    n = pa.shape[1]
    budget = u.shape[0]
    accepted = 0
    attempts = 0
    for i in range(budget):
        attempts += 1
        _regen_candidate(pa, pr, ps, i, u, wa, wr, ws, d_kind, d_host,
                         d_service, attacker_id, p_detect, cand_obs, scratch,
                         subnet_of, gm, ehost_mask, taccess, priority,
                         n_services, target, entry_subnet, subnet_ids,
                         sel_uniform)
        ok = True
        for h in range(n):
            if cand_obs[h] != obs[h]:
                ok = False
                break
        if ok:
            for h in range(n):
                out_a[accepted, h] = wa[h]
                out_r[accepted, h] = wr[h]
                out_s[accepted, h] = ws[h]
            accepted += 1
            if accepted == m_out:
                return accepted, attempts, FILTER_OK

    if accepted > 0:
        for k in range(accepted, m_out):
            j = int(refill_u[k] * accepted)
            if j >= accepted:
                j = accepted - 1
            for h in range(n):
                out_a[k, h] = out_a[j, h]
                out_r[k, h] = out_r[j, h]
                out_s[k, h] = out_s[j, h]
        return accepted, attempts, FILTER_PARTIAL

    # nothing matched: score every candidate by observation mismatches
    best = n + 1
    for i in range(budget):
        _regen_candidate(pa, pr, ps, i, u, wa, wr, ws, d_kind, d_host,
                         d_service, attacker_id, p_detect, cand_obs, scratch,
                         subnet_of, gm, ehost_mask, taccess, priority,
                         n_services, target, entry_subnet, subnet_ids,
                         sel_uniform)
        mm = 0
        for h in range(n):
            if cand_obs[h] != obs[h]:
                mm += 1
        mismatches[i] = mm
        if mm < best:
            best = mm
    n_best = 0
    for i in range(budget):
        if mismatches[i] == best:
            best_rows[n_best] = i
            n_best += 1
    for k in range(m_out):
        i = best_rows[k % n_best]
        _regen_candidate(pa, pr, ps, i, u, wa, wr, ws, d_kind, d_host,
                         d_service, attacker_id, p_detect, cand_obs, scratch,
                         subnet_of, gm, ehost_mask, taccess, priority,
                         n_services, target, entry_subnet, subnet_ids,
                         sel_uniform)
        for h in range(n):
            out_a[k, h] = wa[h]
            out_r[k, h] = wr[h]
            out_s[k, h] = ws[h]
    return 0, attempts, FILTER_NEAREST
