import numpy as np
import pytest

from cage2pomdp.adversary import (AttackerDistribution, AttackerStrategyId,
                                  ExploitSelectionPolicy, bline_action,
                                  make_strategy, meander_action,
                                  sample_attacker)
from cage2pomdp.dynamics import (AccessState, AttackerActionKind,
                                 CageSimulator, DefenderAction,
                                 DefenderActionKind, initial_state)
from test_dynamics import with_access


class TestExploitSelection:
    def test_default_priority_ranks_superuser_services_first(self, scn):
        sel = ExploitSelectionPolicy.default(scn)
        names = [scn.services[i] for i in sel.priority]
        assert names == ["SSH", "SMB", "RDS", "MYSQL", "SMTP", "SSHD",
                         "FTP", "APACHE2", "TOMCAT8"]

    def test_priority_must_be_permutation(self):
        with pytest.raises(ValueError):
            ExploitSelectionPolicy(priority=(0, 0, 1))

    def test_uniform_needs_rng_for_bline(self, scn):
        sel = ExploitSelectionPolicy.uniform_random(scn)
        st = with_access(scn, **{"CLIENT-1": "S"})
        with pytest.raises(ValueError):
            bline_action(scn, st, sel)
        action = bline_action(scn, st, sel, np.random.default_rng(0))
        assert action.kind is AttackerActionKind.SCAN  # nothing scanned yet


class TestBLine:
    def test_opening_is_discover_entry_subnet(self, scn):
        sel = ExploitSelectionPolicy.default(scn)
        action = bline_action(scn, initial_state(scn), sel)
        assert action.kind is AttackerActionKind.DISCOVER
        assert action.subnet == 1

    def test_privileged_target_is_interrupted(self, scn):
        sel = ExploitSelectionPolicy.default(scn)
        st = with_access(scn, **{"OP-SERVER": "P"})
        action = bline_action(scn, st, sel)
        assert action.kind is AttackerActionKind.INTERRUPT
        assert action.host == scn.host_index["OP-SERVER"]

    def test_exploits_superuser_service_first(self, scn):
        st = with_access(scn, **{"CLIENT-1": "S"})
        scanned = st.scanned.copy()
        scanned[0] = scn.tables.ehost_mask[0]  # SSH + FTP
        st = type(st)(access=st.access.copy(), running=st.running.copy(),
                      scanned=scanned)
        action = bline_action(scn, st, ExploitSelectionPolicy.default(scn))
        assert action.kind is AttackerActionKind.EXPLOIT
        assert scn.services[action.service] == "SSH"

    def test_fixed_seed_independent_kill_chain(self, scn):
        # against an idle defender the whole trajectory is deterministic;
        # the target is interrupted at step 17 regardless of the seed
        labels = []
        for seed in (0, 99):
            sim = CageSimulator(scn, make_strategy(AttackerStrategyId.BLINE, scn),
                                detection_probability=1.0)
            rng = np.random.default_rng(seed)
            st = sim.initial_state()
            seen = []
            for _t in range(20):
                res = sim.step(st, DefenderAction.idle(), rng)
                seen.append(res.attacker_action.label(scn))
                st = res.state
            labels.append(seen)
            op = scn.host_index["OP-SERVER"]
            assert st.access_of(op) is AccessState.INTERRUPTED
        assert labels[0] == labels[1]
        assert labels[0][16] == "Interrupt OP-SERVER"
        assert labels[0][15] != "Interrupt OP-SERVER"

    def test_resumes_from_deepest_foothold_after_restore(self, scn):
        sel = ExploitSelectionPolicy.default(scn)
        # attacker holds ENT-2 at privileged, defender restored OP-SERVER back
        # to scanned: the attack continues on OP-SERVER, not from scratch
        st = with_access(scn, **{"CLIENT-1": "P", "ENT-1": "P", "ENT-2": "P",
                                 "OP-SERVER": "S"})
        scanned = st.scanned.copy()
        scanned[scn.host_index["OP-SERVER"]] = scn.tables.ehost_mask[
            scn.host_index["OP-SERVER"]]
        st = type(st)(access=st.access.copy(), running=st.running.copy(),
                      scanned=scanned)
        action = bline_action(scn, st, sel)
        assert action.kind is AttackerActionKind.EXPLOIT
        assert action.host == scn.host_index["OP-SERVER"]

    def test_recovers_after_mid_chain_eviction(self, scn):
        # run to ENT-1 privileged, then restore it: next action re-exploits
        # ENT-1 from its scanned knowledge
        sim = CageSimulator(scn, make_strategy(AttackerStrategyId.BLINE, scn),
                            detection_probability=1.0)
        rng = np.random.default_rng(0)
        st = sim.initial_state()
        for _t in range(8):  # through "Escalate ENT-1"
            st = sim.step(st, DefenderAction.idle(), rng).state
        e1 = scn.host_index["ENT-1"]
        assert st.access_of(e1) is AccessState.PRIVILEGED
        # the restore lands in the defender phase; the attacker of that same
        # step already re-exploits the freshly restored host
        res = sim.step(st, DefenderAction(DefenderActionKind.RESTORE, host=e1),
                       rng)
        assert res.attacker_action.kind is AttackerActionKind.EXPLOIT
        assert res.attacker_action.host == e1
        assert res.state.access_of(e1) is AccessState.ROOT

    def test_actions_always_legal(self, scn):
        # along a full episode the strategy never exploits an unscanned host
        # and never exploits a service outside the host's scanned set
        sim = CageSimulator(scn, make_strategy(AttackerStrategyId.BLINE, scn),
                            detection_probability=1.0)
        rng = np.random.default_rng(3)
        st = sim.initial_state()
        for _t in range(30):
            pre = st
            res = sim.step(st, DefenderAction.idle(), rng)
            act = res.attacker_action
            if act.kind is AttackerActionKind.EXPLOIT:
                assert pre.access_of(act.host) is AccessState.SCANNED
                assert pre.scanned[act.host] >> act.service & 1
            st = res.state


class TestMeander:
    def test_opening_is_discover_entry_subnet(self, scn):
        action = meander_action(scn, initial_state(scn),
                                ExploitSelectionPolicy.default(scn),
                                np.random.default_rng(0))
        assert action.kind is AttackerActionKind.DISCOVER
        assert action.subnet == 1

    def test_privileged_target_is_interrupted(self, scn):
        st = with_access(scn, **{"OP-SERVER": "P"})
        action = meander_action(scn, st, ExploitSelectionPolicy.default(scn),
                                np.random.default_rng(0))
        assert action.kind is AttackerActionKind.INTERRUPT

    def test_pivots_to_known_enterprise_hosts(self, scn):
        # whole client subnet rooted, two enterprise hosts known: the only
        # moves are advancing those hosts (subnet 2 is not sweepable yet)
        st = with_access(scn, **{"CLIENT-1": "P", "CLIENT-2": "P",
                                 "CLIENT-3": "P", "CLIENT-4": "P",
                                 "ENT-0": "K", "ENT-1": "K"})
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(50):
            action = meander_action(scn, st,
                                    ExploitSelectionPolicy.default(scn), rng)
            assert action.kind is AttackerActionKind.SCAN
            seen.add(scn.hosts[action.host].name)
        assert seen == {"ENT-0", "ENT-1"}

    def test_discovers_sweepable_subnet_with_hidden_hosts(self, scn):
        st = with_access(scn, **{"CLIENT-1": "P", "CLIENT-2": "P",
                                 "CLIENT-3": "P", "CLIENT-4": "P",
                                 "ENT-1": "P"})
        action = meander_action(scn, st, ExploitSelectionPolicy.default(scn),
                                np.random.default_rng(0))
        assert action.kind is AttackerActionKind.DISCOVER
        assert action.subnet == 2

    def test_reaches_interrupt_within_horizon(self, scn):
        # finite-time reachability vs a no-op defender: every seed interrupts
        # the target within T=100
        sim = CageSimulator(scn, make_strategy(AttackerStrategyId.MEANDER, scn),
                            detection_probability=1.0)
        op = scn.host_index["OP-SERVER"]
        steps_needed = []
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            st = sim.initial_state()
            reached = None
            for t in range(1, 101):
                st = sim.step(st, DefenderAction.idle(), rng).state
                if st.access_of(op) is AccessState.INTERRUPTED:
                    reached = t
                    break
            assert reached is not None, f"seed {seed} did not interrupt in 100 steps"
            steps_needed.append(reached)
        assert max(steps_needed) <= 100

    def test_consumes_exactly_one_uniform(self, scn):
        st = with_access(scn, **{"CLIENT-1": "K", "CLIENT-2": "K"})
        rng1 = np.random.default_rng(5)
        rng2 = np.random.default_rng(5)
        meander_action(scn, st, ExploitSelectionPolicy.default(scn), rng1)
        rng2.random()
        assert rng1.random() == rng2.random()


class TestSampling:
    def test_point_mass(self):
        dist = AttackerDistribution.point_mass(AttackerStrategyId.BLINE)
        rng = np.random.default_rng(0)
        assert all(sample_attacker(dist, rng) is AttackerStrategyId.BLINE
                   for _ in range(100))

    def test_zero_weight_never_drawn(self):
        dist = AttackerDistribution(weights=(
            (AttackerStrategyId.BLINE, 0.0), (AttackerStrategyId.MEANDER, 1.0)))
        rng = np.random.default_rng(1)
        assert all(sample_attacker(dist, rng) is AttackerStrategyId.MEANDER
                   for _ in range(100))

    def test_even_split_frequency(self):
        dist = AttackerDistribution(weights=(
            (AttackerStrategyId.BLINE, 0.5), (AttackerStrategyId.MEANDER, 0.5)))
        rng = np.random.default_rng(2)
        draws = sum(sample_attacker(dist, rng) is AttackerStrategyId.BLINE
                    for _ in range(10_000))
        assert abs(draws / 10_000 - 0.5) < 0.02

    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError):
            AttackerDistribution(weights=((AttackerStrategyId.BLINE, 0.7),))
        with pytest.raises(ValueError):
            AttackerDistribution(weights=((AttackerStrategyId.BLINE, -0.5),
                                          (AttackerStrategyId.MEANDER, 1.5)))
