//! Functions of a state and a population measure, `U(x, m)`.
//!
//! Solvers evaluate such functions at many states for one fixed measure, so
//! the measure argument is frozen first with [`MeasureField::bind`] and the
//! result is a plain function of the state. Fields that depend on the measure
//! only through its mean pay the `O(n)` mean computation once per bind.

use std::fmt;
use std::sync::Arc;

use crate::error::Result;
use crate::measures::EmpiricalMeasure;

/// A function of the state with the measure argument already fixed.
pub type StateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub trait MeasureField: Send + Sync {
    fn bind(&self, m: &EmpiricalMeasure) -> Result<StateFn>;

    /// `U(x, m)` for a single point. Prefer [`bind`](Self::bind) in loops.
    fn eval(&self, x: f64, m: &EmpiricalMeasure) -> Result<f64> {
        Ok(self.bind(m)?(x))
    }
}

type MeanFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type GeneralFn = Arc<dyn Fn(f64, &EmpiricalMeasure) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Constant(f64),
    State(StateFn),
    Mean(MeanFn),
    General(GeneralFn),
    Sum(Box<Field>, Box<Field>),
    Scaled(Box<Field>, f64),
}

/// A closure-backed [`MeasureField`].
#[derive(Clone)]
pub struct Field(Kind);

impl Field {
    pub fn constant(c: f64) -> Self {
        Field(Kind::Constant(c))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// A field that ignores the measure.
    pub fn state(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Field(Kind::State(Arc::new(f)))
    }

    /// A field depending on the measure through its (1-D) mean only:
    /// `f(x, mean(m))`.
    pub fn of_mean(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Field(Kind::Mean(Arc::new(f)))
    }

    /// Arbitrary measure dependence. Binding clones the measure.
    pub fn general(f: impl Fn(f64, &EmpiricalMeasure) -> f64 + Send + Sync + 'static) -> Self {
        Field(Kind::General(Arc::new(f)))
    }

    pub fn plus(self, other: Field) -> Self {
        Field(Kind::Sum(Box::new(self), Box::new(other)))
    }

    pub fn scaled(self, s: f64) -> Self {
        Field(Kind::Scaled(Box::new(self), s))
    }

    /// True when the field provably ignores its measure argument.
    pub fn is_measure_free(&self) -> bool {
        match &self.0 {
            Kind::Constant(_) | Kind::State(_) => true,
            Kind::Mean(_) | Kind::General(_) => false,
            Kind::Sum(a, b) => a.is_measure_free() && b.is_measure_free(),
            Kind::Scaled(a, _) => a.is_measure_free(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.0, Kind::Constant(c) if c == 0.0)
    }

    /// Binds a measure-free field without a measure.
    pub fn bind_free(&self) -> Option<StateFn> {
        match &self.0 {
            Kind::Constant(c) => {
                let c = *c;
                Some(Arc::new(move |_| c))
            }
            Kind::State(f) => Some(f.clone()),
            Kind::Sum(a, b) => {
                let (fa, fb) = (a.bind_free()?, b.bind_free()?);
                Some(Arc::new(move |x| fa(x) + fb(x)))
            }
            Kind::Scaled(a, s) => {
                let (fa, s) = (a.bind_free()?, *s);
                Some(Arc::new(move |x| s * fa(x)))
            }
            Kind::Mean(_) | Kind::General(_) => None,
        }
    }
}

impl MeasureField for Field {
    fn bind(&self, m: &EmpiricalMeasure) -> Result<StateFn> {
        Ok(match &self.0 {
            Kind::Constant(c) => {
                let c = *c;
                Arc::new(move |_| c)
            }
            Kind::State(f) => f.clone(),
            Kind::Mean(f) => {
                let mbar = m.mean_1d()?;
                let f = f.clone();
                Arc::new(move |x| f(x, mbar))
            }
            Kind::General(f) => {
                let f = f.clone();
                let m = m.clone();
                Arc::new(move |x| f(x, &m))
            }
            Kind::Sum(a, b) => {
                let (fa, fb) = (a.bind(m)?, b.bind(m)?);
                Arc::new(move |x| fa(x) + fb(x))
            }
            Kind::Scaled(a, s) => {
                let (fa, s) = (a.bind(m)?, *s);
                Arc::new(move |x| s * fa(x))
            }
        })
    }
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            Kind::Constant(c) => write!(f, "Field::constant({c})"),
            Kind::State(_) => f.write_str("Field::state(..)"),
            Kind::Mean(_) => f.write_str("Field::of_mean(..)"),
            Kind::General(_) => f.write_str("Field::general(..)"),
            Kind::Sum(a, b) => write!(f, "({a:?} + {b:?})"),
            Kind::Scaled(a, s) => write!(f, "{s} * {a:?}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_field_binds_mean_once() {
        let m = EmpiricalMeasure::uniform(vec![1.0, 3.0]).unwrap();
        let u = Field::of_mean(|x, mbar| x * mbar);
        assert_eq!(u.eval(2.0, &m).unwrap(), 4.0);
    }

    #[test]
    fn sums_and_scales_compose() {
        let m = EmpiricalMeasure::dirac(1.0);
        let u = Field::state(|x| x).plus(Field::constant(2.0)).scaled(3.0);
        assert_eq!(u.eval(1.0, &m).unwrap(), 9.0);
        assert!(u.is_measure_free());
        assert_eq!(u.bind_free().unwrap()(1.0), 9.0);
        assert!(!Field::of_mean(|x, _| x).is_measure_free());
    }
}
