"""Map sequences with fresh bath copies: cumulative bookkeeping, joint
trajectory ensembles against a tripartite joint-unitary oracle, sequence-level
fluctuation relations and the drive-plus-relax cycle."""

import numpy as np
import pytest

from qmap import concat, cptpmap, linalg, model, thermo, trajectories as tr
from qmap.errors import CapacityError, ContractError, ConvergenceError
from conftest import make_spec, random_density


def energy_basis(spec):
    return tr.MeasurementBasis.from_observable(spec.h_s, "H_S")


def xx_parts():
    chain = model.SpinChainParams(sites=3, h=2.0, jx=(3.0, 3.0))
    return model.build_chain(chain), model.build_h0(chain)


class TestMapSequence:
    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            concat.MapSequence(steps=())

    def test_mixed_beta_rejected(self, thermal_spec):
        other = make_spec(1, 1.0, (), (), 0.5, 3.0, 3.0, 4.0)
        with pytest.raises(ContractError):
            concat.MapSequence(steps=(thermal_spec, other))

    def test_mixed_dimension_rejected(self, thermal_spec, xy2_spec):
        with pytest.raises(ContractError):
            concat.MapSequence(steps=(thermal_spec, xy2_spec))


class TestRunSequence:
    def test_cumulative_is_floating_sum(self, xy3_spec):
        seq = concat.MapSequence(steps=(xy3_spec,) * 5)
        rng = np.random.default_rng(50)
        steps = concat.run_sequence(seq, random_density(rng, 8))
        cum = thermo.ZERO_RECORD
        for s in steps:
            cum = cum + s.record
            for got, want in zip(
                (s.cumulative.de, s.cumulative.q, s.cumulative.w,
                 s.cumulative.ds, s.cumulative.dsi),
                (cum.de, cum.q, cum.w, cum.ds, cum.dsi),
            ):
                assert got == want

    def test_cumulative_first_law(self, xy3_spec):
        seq = concat.MapSequence(steps=(xy3_spec,) * 10)
        rng = np.random.default_rng(51)
        steps = concat.run_sequence(seq, random_density(rng, 8))
        total = steps[-1].cumulative
        assert abs(total.de - total.w - total.q) < 1e-9
        assert abs(total.dsi - (total.ds - xy3_spec.beta * total.q)) < 1e-9
        assert total.dsi >= -1e-9

    def test_thermal_relaxation_staircase(self, thermal_spec):
        seq = concat.MapSequence(steps=(thermal_spec,) * 12)
        rng = np.random.default_rng(52)
        steps = concat.run_sequence(seq, random_density(rng, 2))
        omega = model.gibbs_state(thermal_spec.h_s, thermal_spec.beta)
        dists = [linalg.hs_distance(s.state, omega) for s in steps]
        assert all(b <= a + 1e-15 for a, b in zip(dists, dists[1:]))
        assert dists[-1] < 1e-5

    def test_xx_cumulative_asymptotics(self, xx3_spec):
        h_s, h0 = xx_parts()
        beta = xx3_spec.beta
        rho0 = model.gibbs_state(h_s, beta)
        omega0 = model.gibbs_state(h0, beta)
        h_i = h_s - h0
        w_inf = float(np.trace(h_i @ (omega0 - rho0)).real)
        q_inf = float(np.trace(h0 @ (omega0 - rho0)).real)
        dsi_inf = linalg.rel_entropy(rho0, omega0)
        seq = concat.MapSequence(steps=(xx3_spec,) * 600)
        total = concat.run_sequence(seq, rho0)[-1].cumulative
        assert abs(total.w - w_inf) < 1e-6
        assert abs(total.q - q_inf) < 1e-6
        assert abs(total.dsi - dsi_inf) < 1e-6

    def test_xy_constant_per_step_records(self, xy3_spec, xy3_kraus):
        pi = cptpmap.invariant_state(
            xy3_kraus, model.gibbs_state(xy3_spec.h_s, xy3_spec.beta),
            tol=1e-24,
        )
        seq = concat.MapSequence(steps=(xy3_spec,) * 5)
        steps = concat.run_sequence(seq, pi)
        a, b = steps[0].record, steps[-1].record
        for xa, xb in zip((a.de, a.q, a.w, a.ds, a.dsi),
                          (b.de, b.q, b.w, b.ds, b.dsi)):
            assert abs(xa - xb) < 1e-8
        assert b.dsi > 1e-4


class TestEnumerateSequence:
    def test_single_step_reduces_to_plain_enumeration(self, xy2_spec, xy2_kraus):
        basis = energy_basis(xy2_spec)
        omega = model.gibbs_state(xy2_spec.h_s, xy2_spec.beta)
        seq = concat.MapSequence(steps=(xy2_spec,))
        seq_recs = concat.enumerate_sequence(seq, basis, basis, omega)
        plain = tr.enumerate_trajectories(
            xy2_spec, basis, basis, omega, kraus=xy2_kraus
        )
        by_key = {(r.n, r.transitions, r.m): r for r in plain}
        assert len(seq_recs) == len(plain)
        for r in seq_recs:
            other = by_key[(r.n, r.transitions, r.m)]
            assert abs(r.p - other.p) < 1e-13
            assert abs(r.q - other.q) < 1e-12
            assert abs(r.w - other.w) < 1e-12

    def test_two_step_tripartite_oracle(self, drive_spec, thermal_spec):
        # one system qubit with two fresh bath qubits: the joint trajectory
        # probabilities must match amplitudes of U2 U1 on the 8-dim space
        seq = concat.MapSequence(steps=(drive_spec, thermal_spec))
        basis = energy_basis(drive_spec)
        omega = model.gibbs_state(drive_spec.h_s, drive_spec.beta)
        records = concat.enumerate_sequence(seq, basis, basis, omega)
        assert len(records) == 2 * 4 * 4 * 2

        u1 = cptpmap.dilation_unitary(drive_spec)  # acts on S (x) B1
        u2 = cptpmap.dilation_unitary(thermal_spec)  # acts on S (x) B2
        u1_full = np.kron(u1, np.eye(2))
        t2 = u2.reshape(2, 2, 2, 2)  # (s', b2', s, b2)
        u2_full = np.einsum("aqbr,pw->apqbwr", t2, np.eye(2)).reshape(8, 8)
        u_tot = u2_full @ u1_full

        w1, vb1 = linalg.hermitian_eig(drive_spec.h_b)
        w2, vb2 = linalg.hermitian_eig(thermal_spec.h_b)
        p1 = np.exp(-drive_spec.beta * w1)
        p1 /= p1.sum()
        p2 = np.exp(-thermal_spec.beta * w2)
        p2 /= p2.sum()
        ws, vs = linalg.hermitian_eig(drive_spec.h_s)
        p_sys = np.exp(-drive_spec.beta * ws)
        p_sys /= p_sys.sum()

        for r in records:
            (i1, j1), (i2, j2) = r.transitions
            ket = np.kron(np.kron(vs[:, r.n], vb1[:, i1]), vb2[:, i2])
            bra = np.kron(np.kron(vs[:, r.m], vb1[:, j1]), vb2[:, j2])
            amp = bra.conj() @ u_tot @ ket
            p_direct = abs(amp) ** 2 * p_sys[r.n] * p1[i1] * p2[i2]
            assert abs(r.p - p_direct) < 1e-12
            q_direct = (w1[i1] - w1[j1]) + (w2[i2] - w2[j2])
            assert abs(r.q - q_direct) < 1e-12

    def test_means_match_run_sequence(self, xy2_spec):
        basis = energy_basis(xy2_spec)
        omega = model.gibbs_state(xy2_spec.h_s, xy2_spec.beta)
        seq = concat.MapSequence(steps=(xy2_spec, xy2_spec))
        records = concat.enumerate_sequence(seq, basis, basis, omega)
        total = concat.run_sequence(seq, omega)[-1].cumulative
        mean_w = sum(r.p * r.w for r in records)
        mean_q = sum(r.p * r.q for r in records)
        mean_de = sum(r.p * r.de for r in records)
        assert abs(mean_w - total.w) < 1e-8
        assert abs(mean_q - total.q) < 1e-8
        assert abs(mean_de - total.de) < 1e-8

    def test_budget_error_names_count(self, xy2_spec):
        basis = energy_basis(xy2_spec)
        omega = model.gibbs_state(xy2_spec.h_s, xy2_spec.beta)
        seq = concat.MapSequence(steps=(xy2_spec,) * 3)
        count = (len(basis.projectors) ** 2) * (4 ** 3)
        with pytest.raises(CapacityError, match=str(count)):
            concat.enumerate_sequence(seq, basis, basis, omega, budget=count - 1)

    def test_work_fluctuations_not_additive(self, drive_spec):
        # the two-step work distribution is not the convolution of the
        # single-step ones, even though the averages add
        basis = energy_basis(drive_spec)
        omega = model.gibbs_state(drive_spec.h_s, drive_spec.beta)
        seq1 = concat.MapSequence(steps=(drive_spec,))
        seq2 = concat.MapSequence(steps=(drive_spec, drive_spec))
        p1 = tr.distribution_of(
            concat.enumerate_sequence(seq1, basis, basis, omega), "w"
        )
        p2 = tr.distribution_of(
            concat.enumerate_sequence(seq2, basis, basis, omega), "w"
        )
        conv_vals = []
        conv_probs = []
        for va, pa in zip(p1.values, p1.probs):
            for vb, pb in zip(p1.values, p1.probs):
                conv_vals.append(va + vb)
                conv_probs.append(pa * pb)
        conv = tr.Distribution.from_atoms(conv_vals, conv_probs)
        assert tr.max_atom_difference(p2, conv) > 1e-6

    def test_sequence_detailed_ft(self, drive_spec, thermal_spec):
        # backward process: reversed maps applied in reversed order
        seq = concat.MapSequence(steps=(drive_spec, thermal_spec))
        basis = energy_basis(drive_spec)
        omega = model.gibbs_state(drive_spec.h_s, drive_spec.beta)
        fwd = concat.enumerate_sequence(seq, basis, basis, omega)
        theta = tr.spin_time_reversal(1)
        rev_sets = [tr.reversed_kraus(k, theta) for k in seq.kraus]
        rev_frames = [theta.r_s @ np.conj(f) for f in basis.frames]
        rho_bar = basis.dephase(omega)
        rho_out = rho_bar
        for k in seq.kraus:
            rho_out = cptpmap.apply_map(k, rho_out)
        p_fin = np.clip(basis.outcome_probs(rho_out), 0.0, None)
        rev_ops = [{(op.i, op.j): op for op in k.operators} for k in rev_sets]
        worst = 0.0
        for r in fwd:
            if r.p <= 1e-12:
                continue
            m = r.m
            f_m = rev_frames[m]
            sigma = p_fin[m] * (f_m @ f_m.conj().T) / f_m.shape[1]
            # reversed order: last forward step first, labels swapped
            for step, (i, j) in zip(
                reversed(rev_ops), reversed(r.transitions)
            ):
                op = step[(j, i)]
                sigma = op.op @ sigma @ op.op.conj().T
            f_n = rev_frames[r.n]
            p_back = float(
                np.trace(f_n.conj().T @ sigma @ f_n).real
            )
            assert p_back > 1e-12
            worst = max(worst, abs(np.log(r.p) - r.dsi - np.log(p_back)))
        assert worst < 1e-8


class TestPlanRelaxers:
    def test_fig1_budget(self, drive_spec, thermal_spec):
        cycle = concat.plan_relaxers(drive_spec, thermal_spec, tol=1e-11)
        assert 1 <= len(cycle.relaxers) <= 16

    def test_non_thermal_relaxer_rejected(self, drive_spec):
        with pytest.raises(ContractError):
            concat.CycleSpec(drive=drive_spec, relaxers=(drive_spec,))

    def test_budget_exhaustion(self, drive_spec, thermal_spec):
        with pytest.raises(ConvergenceError):
            concat.plan_relaxers(drive_spec, thermal_spec, tol=1e-13, max_steps=1)


@pytest.fixture(scope="module")
def fig1_cycle(drive_spec, thermal_spec):
    cycle = concat.plan_relaxers(drive_spec, thermal_spec, tol=1e-11)
    return concat.run_cycle(cycle)


class TestRunCycle:
    def test_thermalizes(self, fig1_cycle):
        assert fig1_cycle.final_distance < 1e-5

    def test_state_and_entropy_closure(self, drive_spec, thermal_spec):
        # a few extra relaxers beyond the distribution tolerance push the
        # return to the Gibbs state down to where the averaged records close
        seq = concat.MapSequence(steps=(drive_spec,) + (thermal_spec,) * 12)
        omega = model.gibbs_state(drive_spec.h_s, drive_spec.beta)
        total = concat.run_sequence(seq, omega)[-1].cumulative
        assert abs(total.de) < 1e-8
        assert abs(total.ds) < 1e-8

    def test_total_entropy_production_is_drive_work(self, fig1_cycle, drive_spec):
        beta = drive_spec.beta
        assert abs(fig1_cycle.total.dsi - beta * fig1_cycle.drive_record.w) < 1e-8

    def test_cycle_work_equals_drive_work(self, fig1_cycle):
        assert tr.max_atom_difference(
            fig1_cycle.p_cycle_w, fig1_cycle.p_drive_w
        ) < 1e-10

    def test_cycle_entropy_matches_scaled_work(self, fig1_cycle, drive_spec):
        # residual thermalization shifts the surprisal atoms by ~1e-6, so
        # rebin both distributions before comparing
        beta = drive_spec.beta
        scaled = tr.Distribution.from_atoms(
            beta * fig1_cycle.p_cycle_w.values,
            fig1_cycle.p_cycle_w.probs,
            bin_tol=1e-5,
        )
        dsi = tr.Distribution.from_atoms(
            fig1_cycle.p_cycle_dsi.values,
            fig1_cycle.p_cycle_dsi.probs,
            bin_tol=1e-5,
        )
        assert tr.max_atom_difference(dsi, scaled) < 1e-8

    def test_drive_entropy_differs_from_cycle_entropy(self, fig1_cycle):
        assert tr.max_atom_difference(
            fig1_cycle.p_drive_dsi, fig1_cycle.p_cycle_dsi
        ) > 1e-6

    def test_relaxers_leave_work_marginal_invariant(
        self, drive_spec, thermal_spec
    ):
        # marginalizing the cycle ensemble over relaxer outcomes and the final
        # measurement reproduces the drive-only joint (n, k1) probabilities
        cycle = concat.plan_relaxers(drive_spec, thermal_spec, tol=1e-11)
        seq = concat.MapSequence(steps=(cycle.drive,) + cycle.relaxers)
        drive_seq = concat.MapSequence(steps=(cycle.drive,))
        basis = energy_basis(drive_spec)
        omega = model.gibbs_state(drive_spec.h_s, drive_spec.beta)
        cycle_recs = concat.enumerate_sequence(seq, basis, basis, omega)
        drive_recs = concat.enumerate_sequence(drive_seq, basis, basis, omega)
        marg: dict = {}
        for r in cycle_recs:
            key = (r.n, r.transitions[0])
            marg[key] = marg.get(key, 0.0) + r.p
        direct: dict = {}
        for r in drive_recs:
            key = (r.n, r.transitions[0])
            direct[key] = direct.get(key, 0.0) + r.p
        assert set(marg) == set(direct)
        for key, p in direct.items():
            assert abs(marg[key] - p) < 1e-10

    def test_zero_drive_cycle_work_is_delta(self, thermal_spec):
        quiet = make_spec(1, 1.0, (), (), 1.0, 0.0, 0.0, 1.0)
        cycle = concat.plan_relaxers(quiet, thermal_spec, tol=1e-11)
        res = concat.run_cycle(cycle)
        vals, probs = res.p_cycle_w.significant()
        assert len(vals) == 1 and abs(vals[0]) < 1e-9

    def test_incomplete_relaxation_raises(self, drive_spec, thermal_spec):
        cycle = concat.CycleSpec(
            drive=drive_spec, relaxers=(thermal_spec,), tol=1e-13
        )
        with pytest.raises(ConvergenceError):
            concat.run_cycle(cycle)
