use crate::error::{IconError, Result};
use serde::{Deserialize, Serialize};

/// Number of stored points per ODE function.
pub const ODE_POINTS: usize = 50;
/// Number of stored points per oscillator / boundary-value function.
pub const LINE_POINTS: usize = 100;
/// Oscillator split index: the first half of the grid is `t < 0.5`.
pub const OSC_SPLIT: usize = 50;
/// Time rows of the MFC grid with `t < 0.5`.
pub const MFC_EARLY_ROWS: usize = 25;

/// How a stored function is trimmed to `n` key-value pairs in a prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    /// Keep the first `n - shorten` pairs.
    Prefix { shorten: usize },
    /// Uniformly random subset of size `n`, order preserved.
    Random,
    /// Always keep every pair (point conditions such as `u(0)`).
    All,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermSchema {
    pub name: String,
    pub len: usize,
    pub selection: Selection,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilySchema {
    pub id: u8,
    pub name: String,
    pub condition: Vec<TermSchema>,
    pub qoi: TermSchema,
    pub grid: String,
}

/// Which solver produces the family's data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Ode1,
    Ode2,
    Ode3,
    NewOde,
    Oscillator,
    Poisson,
    LinearRd,
    NonlinearRd,
    MfcG,
    MfcRho0,
}

/// One of the twenty problem families (19 in the training suite plus the
/// held-out new ODE, id 20).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProblemFamily(u8);

pub const ALL_FAMILY_IDS: std::ops::RangeInclusive<u8> = 1..=20;
pub const TRAINING_FAMILY_IDS: std::ops::RangeInclusive<u8> = 1..=19;

impl ProblemFamily {
    pub fn new(id: u8) -> Result<Self> {
        if ALL_FAMILY_IDS.contains(&id) {
            Ok(Self(id))
        } else {
            Err(IconError::InvalidInput(format!("unknown problem family {id}")))
        }
    }

    pub fn all() -> Vec<Self> {
        ALL_FAMILY_IDS.map(Self).collect()
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn kind(self) -> Kind {
        match self.0 {
            1 | 2 => Kind::Ode1,
            3 | 4 => Kind::Ode2,
            5 | 6 => Kind::Ode3,
            7 | 8 => Kind::Oscillator,
            9 | 10 => Kind::Poisson,
            11 | 12 => Kind::LinearRd,
            13 | 14 => Kind::NonlinearRd,
            15..=17 => Kind::MfcG,
            18 | 19 => Kind::MfcRho0,
            _ => Kind::NewOde,
        }
    }

    /// Forward families map the "natural" input to the solution; inverse ones
    /// swap the roles.
    pub fn is_inverse(self) -> bool {
        matches!(self.0, 2 | 4 | 6 | 8 | 10 | 12 | 14)
    }

    pub fn uses_prefix_rule(self) -> bool {
        matches!(self.kind(), Kind::Ode1 | Kind::Ode2 | Kind::Ode3 | Kind::NewOde)
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            1 => "ode1-forward",
            2 => "ode1-inverse",
            3 => "ode2-forward",
            4 => "ode2-inverse",
            5 => "ode3-forward",
            6 => "ode3-inverse",
            7 => "oscillator-forward",
            8 => "oscillator-inverse",
            9 => "poisson-forward",
            10 => "poisson-inverse",
            11 => "linear-rd-forward",
            12 => "linear-rd-inverse",
            13 => "nonlinear-rd-forward",
            14 => "nonlinear-rd-inverse",
            15 => "mfc-g-1d-1d",
            16 => "mfc-g-1d-2d",
            17 => "mfc-g-2d-2d",
            18 => "mfc-rho0-1d-1d",
            19 => "mfc-rho0-1d-2d",
            _ => "new-ode-forward",
        }
    }

    /// Scalar operator parameters and their sampling intervals.
    pub fn param_ranges(self) -> Vec<(&'static str, f64, f64)> {
        match self.kind() {
            Kind::Ode1 | Kind::Ode2 => vec![("a1", 0.5, 1.5), ("a2", -1.0, 1.0)],
            // a1 multiplies u, a2 multiplies c.
            Kind::Ode3 => vec![("a1", -1.0, 1.0), ("a2", 0.5, 1.5), ("a3", -1.0, 1.0)],
            Kind::NewOde => vec![("a1", 0.5, 1.5), ("a2", -1.0, 1.0), ("b", -0.3, 0.3)],
            Kind::Oscillator => vec![("k", 0.0, 2.0)],
            Kind::Poisson => vec![("u0", -1.0, 1.0), ("u1", -1.0, 1.0)],
            Kind::LinearRd => vec![("u0", -1.0, 1.0), ("u1", -1.0, 1.0), ("a", 0.5, 1.5), ("c", -2.0, 2.0)],
            Kind::NonlinearRd => vec![("u0", -1.0, 1.0), ("u1", -1.0, 1.0), ("a", 0.5, 1.5), ("k", 0.5, 1.5)],
            Kind::MfcG | Kind::MfcRho0 => vec![],
        }
    }

    /// Name of the parameter function, if the operator carries one.
    pub fn param_array(self) -> Option<&'static str> {
        match self.kind() {
            Kind::MfcG => Some("g"),
            Kind::MfcRho0 => Some("rho0"),
            _ => None,
        }
    }

    pub fn schema(self) -> FamilySchema {
        let ode_c =
            |n: &str| TermSchema { name: n.into(), len: ODE_POINTS, selection: Selection::Prefix { shorten: 1 } };
        let ode_u =
            |n: &str| TermSchema { name: n.into(), len: ODE_POINTS, selection: Selection::Prefix { shorten: 0 } };
        let line = |n: &str, len: usize| TermSchema { name: n.into(), len, selection: Selection::Random };
        let point = |n: &str| TermSchema { name: n.into(), len: 1, selection: Selection::All };
        let mfc_late = (crate::mfc::MFC_NT - MFC_EARLY_ROWS) * crate::mfc::MFC_NX;
        let mfc_early = MFC_EARLY_ROWS * crate::mfc::MFC_NX;
        let nx = crate::mfc::MFC_NX;
        let (condition, qoi, grid) = match self.0 {
            1 | 3 | 5 | 20 => (vec![ode_c("c"), point("u(0)")], ode_u("u"), "t in [0,1], 50 points"),
            2 | 4 | 6 => (vec![ode_u("u")], ode_c("c"), "t in [0,1], 50 points"),
            7 => (
                vec![line("u[t<0.5]", OSC_SPLIT)],
                line("u[t>=0.5]", LINE_POINTS - OSC_SPLIT),
                "t in [0,1], 100 points",
            ),
            8 => (
                vec![line("u[t>=0.5]", LINE_POINTS - OSC_SPLIT)],
                line("u[t<0.5]", OSC_SPLIT),
                "t in [0,1], 100 points",
            ),
            9 | 13 => (vec![line("c", LINE_POINTS)], line("u", LINE_POINTS), "x in [0,1], 100 points"),
            10 | 14 => (vec![line("u", LINE_POINTS)], line("c", LINE_POINTS), "x in [0,1], 100 points"),
            11 => (vec![line("k", LINE_POINTS)], line("u", LINE_POINTS), "x in [0,1], 100 points"),
            12 => (vec![line("u", LINE_POINTS)], line("k", LINE_POINTS), "x in [0,1], 100 points"),
            15 => (vec![line("rho(0,x)", nx)], line("rho(1,x)", nx), "periodic x, 100 points; t 51 rows"),
            16 => (vec![line("rho(0,x)", nx)], line("rho[t>=0.5]", mfc_late), "periodic x, 100 points; t 51 rows"),
            17 => (
                vec![line("rho[t<0.5]", mfc_early)],
                line("rho[t>=0.5]", mfc_late),
                "periodic x, 100 points; t 51 rows",
            ),
            18 => (vec![line("g", nx)], line("rho(1,x)", nx), "periodic x, 100 points; t 51 rows"),
            _ => (vec![line("g", nx)], line("rho[t>=0.5]", mfc_late), "periodic x, 100 points; t 51 rows"),
        };
        FamilySchema { id: self.0, name: self.name().into(), condition, qoi, grid: grid.into() }
    }
}

impl std::fmt::Display for ProblemFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.0, self.name())
    }
}

/// Parse `"1,2,5-7"` into family ids.
pub fn parse_family_list(s: &str) -> Result<Vec<ProblemFamily>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || IconError::InvalidInput(format!("bad family list entry '{part}'"));
        if let Some((a, b)) = part.split_once('-') {
            let a: u8 = a.trim().parse().map_err(|_| bad())?;
            let b: u8 = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            for id in a..=b {
                out.push(ProblemFamily::new(id)?);
            }
        } else {
            out.push(ProblemFamily::new(part.parse().map_err(|_| bad())?)?);
        }
    }
    if out.is_empty() {
        return Err(IconError::InvalidInput("empty family list".into()));
    }
    out.sort();
    out.dedup();
    Ok(out)
}
