//! Formulas over `(t, B)` used by state-dependent process specs.

use evalexpr::{
    build_operator_tree, ContextWithMutableFunctions, ContextWithMutableVariables,
    DefaultNumericTypes, EvalexprError, Function, HashMapContext, Node, Value,
};

use crate::error::{Error, Result};

type Ctx = HashMapContext<DefaultNumericTypes>;

/// A compiled formula in the variables `t` and `B`.
///
/// Besides the evalexpr builtins (`min`, `max`, `math::*`, `^`), the bare
/// names `exp`, `ln`, `sqrt` and `abs` are available.
pub(crate) struct StateExpr {
    source: String,
    tree: Node<DefaultNumericTypes>,
    context: Ctx,
}

fn unary(f: fn(f64) -> f64) -> Function<DefaultNumericTypes> {
    Function::new(move |arg: &Value<DefaultNumericTypes>| {
        let x = arg.as_number()?;
        Ok(Value::Float(f(x)))
    })
}

impl StateExpr {
    pub(crate) fn compile(source: &str) -> Result<Self> {
        let err = |e: EvalexprError<DefaultNumericTypes>| Error::Expression {
            expr: source.to_string(),
            message: e.to_string(),
        };
        let tree = build_operator_tree::<DefaultNumericTypes>(source).map_err(err)?;
        let mut context = Ctx::new();
        for (name, f) in [
            ("exp", f64::exp as fn(f64) -> f64),
            ("ln", f64::ln),
            ("sqrt", f64::sqrt),
            ("abs", f64::abs),
        ] {
            context.set_function(name.into(), unary(f)).map_err(err)?;
        }
        let mut compiled = Self {
            source: source.to_string(),
            tree,
            context,
        };
        // Reject unknown identifiers and non-numeric results up front.
        compiled.eval(0.0, 0.0)?;
        Ok(compiled)
    }

    pub(crate) fn eval(&mut self, t: f64, b: f64) -> Result<f64> {
        let err = |e: EvalexprError<DefaultNumericTypes>, src: &str| Error::Expression {
            expr: src.to_string(),
            message: e.to_string(),
        };
        self.context
            .set_value("t".into(), Value::Float(t))
            .map_err(|e| err(e, &self.source))?;
        self.context
            .set_value("B".into(), Value::Float(b))
            .map_err(|e| err(e, &self.source))?;
        let v = self
            .tree
            .eval_number_with_context(&self.context)
            .map_err(|e| err(e, &self.source))?;
        if !v.is_finite() {
            return Err(Error::NumericDomain(format!(
                "`{}` is not finite at t = {t}, B = {b}",
                self.source
            )));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_payoff_at_the_money() {
        let mut e = StateExpr::compile("max(1.0 - exp(0.2*B + (0.0 - 0.02)*t), 0.0)").unwrap();
        assert_eq!(e.eval(0.0, 0.0).unwrap(), 0.0);
        let v = e.eval(0.5, -1.0).unwrap();
        let expected = (1.0f64 - (0.2f64 * -1.0 - 0.02 * 0.5).exp()).max(0.0);
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn integer_results_become_floats() {
        let mut e = StateExpr::compile("max(0, B)").unwrap();
        assert_eq!(e.eval(0.0, -2.0).unwrap(), 0.0);
        assert_eq!(e.eval(0.0, 2.5).unwrap(), 2.5);
        let mut e = StateExpr::compile("abs(B)^2 + t").unwrap();
        assert_eq!(e.eval(1.0, -3.0).unwrap(), 10.0);
    }

    #[test]
    fn rejects_unknown_names_and_bad_syntax() {
        assert!(matches!(
            StateExpr::compile("x + 1"),
            Err(Error::Expression { .. })
        ));
        assert!(StateExpr::compile("max(1.0,").is_err());
        assert!(StateExpr::compile("ln(B)").is_err());
    }
}
