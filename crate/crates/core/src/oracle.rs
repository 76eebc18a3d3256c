//! 256-bit reference arithmetic for tests.

use std::cell::RefCell;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use astro_float::{BigFloat, Consts, RoundingMode};

const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().expect("constant cache"));
}

#[derive(Debug, Clone)]
pub(crate) struct Hp(BigFloat);

impl Hp {
    pub(crate) fn exp(&self) -> Hp {
        CONSTS.with(|c| Hp(self.0.exp(PREC, RM, &mut c.borrow_mut())))
    }

    pub(crate) fn ln(&self) -> Hp {
        CONSTS.with(|c| Hp(self.0.ln(PREC, RM, &mut c.borrow_mut())))
    }
}

impl From<f64> for Hp {
    fn from(v: f64) -> Self {
        Hp(BigFloat::from_f64(v, PREC))
    }
}

impl From<Hp> for f64 {
    fn from(v: Hp) -> f64 {
        if v.0.is_zero() {
            return 0.0;
        }
        format!("{}", v.0).parse().expect("decimal rendering parses")
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident) => {
        impl $tr for Hp {
            type Output = Hp;
            fn $m(self, rhs: Hp) -> Hp {
                Hp(self.0.$m(&rhs.0, PREC, RM))
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);
binop!(Div, div);

impl AddAssign for Hp {
    fn add_assign(&mut self, rhs: Hp) {
        self.0 = self.0.add(&rhs.0, PREC, RM);
    }
}

impl Neg for Hp {
    type Output = Hp;
    fn neg(self) -> Hp {
        Hp(self.0.neg())
    }
}

#[test]
fn reference_values() {
    assert_eq!(f64::from(Hp::from(10.0).ln()), 10f64.ln());
    assert_eq!(f64::from(Hp::from(-30.0).exp()), (-30f64).exp());
    assert_eq!(f64::from(Hp::from(1.0) / Hp::from(3.0)), 1.0 / 3.0);
    assert_eq!(f64::from(Hp::from(0.0)), 0.0);
}
