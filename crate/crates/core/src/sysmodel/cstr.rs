//! Exothermic first-order irreversible reaction `A -> B` in a cooled, well-mixed tank.

use crate::error::{Result, ZempcError};

/// Physical parameters; defaults are the benchmark values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstrParams {
    /// Volumetric flow rate, L/min.
    pub q: f64,
    /// Reactor volume, L.
    pub volume: f64,
    /// Nominal feed concentration, mol/L.
    pub c_af: f64,
    /// Nominal feed temperature, K.
    pub t_f: f64,
    /// Activation energy over gas constant, K.
    pub e_over_r: f64,
    /// Pre-exponential factor, 1/min.
    pub k0: f64,
    /// Heat of reaction `-dH`, J/mol.
    pub neg_delta_h: f64,
    /// Jacket heat transfer coefficient times area, J/(min K).
    pub ua: f64,
    /// Specific heat, J/(g K).
    pub cp: f64,
    /// Density, g/L.
    pub rho: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            q: 100.0,
            volume: 100.0,
            c_af: 1.0,
            t_f: 350.0,
            e_over_r: 8750.0,
            k0: 7.2e10,
            neg_delta_h: 5.0e4,
            ua: 5.0e4,
            cp: 0.239,
            rho: 1000.0,
        }
    }
}

impl CstrParams {
    pub fn as_named(&self) -> Vec<(String, f64)> {
        vec![
            ("q".into(), self.q),
            ("V".into(), self.volume),
            ("C_Af".into(), self.c_af),
            ("T_f".into(), self.t_f),
            ("E_over_R".into(), self.e_over_r),
            ("k0".into(), self.k0),
            ("neg_delta_H".into(), self.neg_delta_h),
            ("UA".into(), self.ua),
            ("cp".into(), self.cp),
            ("rho".into(), self.rho),
        ]
    }

    /// Overrides one parameter by its `as_named` key.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "q" => &mut self.q,
            "V" => &mut self.volume,
            "C_Af" => &mut self.c_af,
            "T_f" => &mut self.t_f,
            "E_over_R" => &mut self.e_over_r,
            "k0" => &mut self.k0,
            "neg_delta_H" => &mut self.neg_delta_h,
            "UA" => &mut self.ua,
            "cp" => &mut self.cp,
            "rho" => &mut self.rho,
            other => return Err(ZempcError::Config(format!("unknown CSTR parameter '{other}'"))),
        };
        *slot = value;
        Ok(())
    }

    /// Arrhenius rate constant at temperature `t`.
    pub fn rate_constant(&self, t: f64) -> f64 {
        self.k0 * (-self.e_over_r / t).exp()
    }
}

#[inline]
pub(crate) fn rhs_unchecked(p: &CstrParams, x: &[f64], t_c: f64, w_dev: &[f64]) -> [f64; 2] {
    let (c_a, t) = (x[0], x[1]);
    let dilution = p.q / p.volume;
    let c_af = p.c_af + w_dev[0];
    let t_f = p.t_f + w_dev[1];
    let reaction = p.rate_constant(t) * c_a;
    [
        dilution * (c_af - c_a) - reaction,
        dilution * (t_f - t)
            + p.neg_delta_h / (p.rho * p.cp) * reaction
            + p.ua / (p.volume * p.rho * p.cp) * (t_c - t),
    ]
}

/// Mass and energy balances `[dC_A/dt, dT/dt]` with feed `C_Af + dC_Af`, `T_f + dT_f`.
pub fn cstr_rhs(x: &[f64], t_c: f64, w_dev: &[f64], params: &CstrParams) -> Result<[f64; 2]> {
    let d = rhs_unchecked(params, x, t_c, w_dev);
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(ZempcError::ModelEvaluation {
            state: x.to_vec(),
            detail: format!("CSTR right-hand side overflowed at T_c={t_c}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_wiring_at_350k() {
        let p = CstrParams::default();
        let k = 7.2e10 * (-8750.0_f64 / 350.0).exp();
        let d = cstr_rhs(&[1.0, 350.0], 350.0, &[0.0, 0.0], &p).unwrap();
        // q/V = 1, feed equals the state, coolant equals the state temperature.
        assert!((d[0] - (-k)).abs() < 1e-12);
        assert!((d[1] - 5.0e4 / (1000.0 * 0.239) * k).abs() < 1e-9);
    }

    #[test]
    fn zero_deviation_is_nominal_feed() {
        let p = CstrParams::default();
        let x = [0.4, 349.0];
        let a = cstr_rhs(&x, 300.0, &[0.0, 0.0], &p).unwrap();
        let mut q = p;
        q.c_af = 1.1;
        q.t_f = 348.0;
        let b = cstr_rhs(&x, 300.0, &[0.0, 0.0], &q).unwrap();
        let c = cstr_rhs(&x, 300.0, &[0.1, -2.0], &p).unwrap();
        assert!(a != b);
        assert!((b[0] - c[0]).abs() < 1e-12 && (b[1] - c[1]).abs() < 1e-12);
    }

    #[test]
    fn overflow_is_an_error() {
        let p = CstrParams::default();
        let err = cstr_rhs(&[f64::INFINITY, 350.0], 300.0, &[0.0, 0.0], &p).unwrap_err();
        assert!(matches!(err, ZempcError::ModelEvaluation { .. }));
    }

    #[test]
    fn unknown_parameter_rejected() {
        let mut p = CstrParams::default();
        assert!(p.set("UA", 4.0e4).is_ok());
        assert_eq!(p.ua, 4.0e4);
        assert!(p.set("bogus", 1.0).is_err());
    }
}
