use super::Network;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Stamps the Π-model of every branch (with off-nominal taps and phase
/// shifters) plus bus shunts into a dense `N_b × N_b` admittance matrix.
pub fn build_ybus(net: &Network) -> DMatrix<Complex64> {
    let n = net.n_bus();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (e, br) in net.branches.iter().enumerate() {
        let (f, t) = net.branch_ends(e);
        let ys = br.series_admittance();
        let tap = Complex64::from_polar(br.ratio(), br.shift.to_radians());
        let ytt = ys + Complex64::new(0.0, br.b_charge / 2.0);
        let yff = ytt / (tap * tap.conj());
        let yft = -ys / tap.conj();
        let ytf = -ys / tap;
        y[(f, f)] += yff;
        y[(f, t)] += yft;
        y[(t, f)] += ytf;
        y[(t, t)] += ytt;
    }
    for (k, b) in net.buses.iter().enumerate() {
        y[(k, k)] += Complex64::new(b.gsh, b.bsh);
    }
    y
}

#[cfg(test)]
mod tests {
    use crate::netmodel::*;

    fn two_bus(x: f64, gsh: f64) -> Network {
        let buses = vec![
            Bus { id: 1, kind: BusKind::Slack, pd: 0.0, qd: 0.0, vmin: 0.9, vmax: 1.1, gsh, bsh: 0.0 },
            Bus { id: 2, kind: BusKind::Load, pd: 0.1, qd: 0.0, vmin: 0.9, vmax: 1.1, gsh: 0.0, bsh: 0.0 },
        ];
        let branches = vec![Branch { from: 1, to: 2, r: 0.0, x, b_charge: 0.0, tap: 0.0, shift: 0.0, rate: 0.0, imax: None }];
        let gens = vec![Generator { bus: 1, pmin: 0.0, pmax: 1.0, qmin: -1.0, qmax: 1.0, cp: 1.0, cq: 0.0, pg0: 0.0, vg0: 1.0 }];
        Network::new("two", 100.0, buses, branches, gens).unwrap()
    }

    #[test]
    fn single_reactance_line() {
        // y = 1/(j0.1) = -j10 on the diagonal, +j10 off it
        let y = build_ybus(&two_bus(0.1, 0.0));
        assert!((y[(0, 0)].im + 10.0).abs() < 1e-12 && y[(0, 0)].re.abs() < 1e-12);
        assert!((y[(0, 1)].im - 10.0).abs() < 1e-12);
        assert!((y[(1, 0)].im - 10.0).abs() < 1e-12);
        assert!((y[(1, 1)].im + 10.0).abs() < 1e-12);
    }

    #[test]
    fn shunt_only_diagonal() {
        let with = build_ybus(&two_bus(0.1, 1.0));
        let without = build_ybus(&two_bus(0.1, 0.0));
        let d = with - without;
        assert!((d[(0, 0)].re - 1.0).abs() < 1e-15);
        assert_eq!(d[(1, 1)].norm(), 0.0);
        assert_eq!(d[(0, 1)].norm(), 0.0);
    }

    #[test]
    fn shunt_free_rows_sum_to_zero() {
        let y = build_ybus(&two_bus(0.1, 0.0));
        for i in 0..2 {
            let s: num_complex::Complex64 = (0..2).map(|j| y[(i, j)]).sum();
            assert!(s.norm() < 1e-12);
        }
    }
}
