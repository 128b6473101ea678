//! A handful of general-purpose kernels, available to every manifest run.

use crate::kernel::{KernelContext, KernelError, KernelRegistry, KernelResult};
use crate::value::Value;

fn map_block(ctx: &KernelContext<'_>, i: usize, f: impl Fn(f64) -> f64) -> Result<Value, KernelError> {
    match ctx.block(i) {
        Value::Scalar(x) => Ok(Value::Scalar(f(x))),
        Value::Scalars(xs) => Ok(Value::Scalars(xs.into_iter().map(f).collect())),
        Value::Vec3s(vs) => Ok(Value::Vec3s(
            vs.into_iter().map(|v| [f(v[0]), f(v[1]), f(v[2])]).collect(),
        )),
        other => Err(KernelError::new(format!(
            "expected numeric input, got {}",
            other.datatype()
        ))),
    }
}

fn identity(ctx: &mut KernelContext<'_>) -> KernelResult {
    Ok(vec![ctx.block(0)])
}

fn square(ctx: &mut KernelContext<'_>) -> KernelResult {
    Ok(vec![map_block(ctx, 0, |x| x * x)?])
}

fn negate(ctx: &mut KernelContext<'_>) -> KernelResult {
    Ok(vec![map_block(ctx, 0, |x| -x)?])
}

fn sum(ctx: &mut KernelContext<'_>) -> KernelResult {
    let total = match ctx.block(0) {
        Value::Scalar(x) => x,
        Value::Scalars(xs) => xs.iter().sum(),
        other => {
            return Err(KernelError::new(format!(
                "sum expects scalars, got {}",
                other.datatype()
            )))
        }
    };
    Ok(vec![Value::Scalar(total)])
}

fn add(ctx: &mut KernelContext<'_>) -> KernelResult {
    let out = match (ctx.block(0), ctx.block(1)) {
        (Value::Scalar(a), Value::Scalar(b)) => Value::Scalar(a + b),
        (Value::Scalars(a), Value::Scalars(b)) if a.len() == b.len() => {
            Value::Scalars(a.iter().zip(&b).map(|(x, y)| x + y).collect())
        }
        (a, b) => {
            return Err(KernelError::new(format!(
                "cannot add {} and {}",
                a.datatype(),
                b.datatype()
            )))
        }
    };
    Ok(vec![out])
}

/// Registers `identity`, `square`, `negate`, `sum`, `add`, `noop` and
/// `fail` (which always returns an error, for exercising failure paths).
pub fn register_builtins(reg: &mut KernelRegistry) {
    let entries: [(&str, usize, usize, fn(&mut KernelContext<'_>) -> KernelResult); 7] = [
        ("identity", 1, 1, identity),
        ("square", 1, 1, square),
        ("negate", 1, 1, negate),
        ("sum", 1, 1, sum),
        ("add", 2, 1, add),
        ("noop", 0, 0, |_| Ok(vec![])),
        ("fail", 0, 0, |_| Err(KernelError::new("fail kernel invoked"))),
    ];
    for (name, i, o, f) in entries {
        if !reg.contains(name) {
            reg.register_fn(name, i, o, f).expect("builtin names are valid");
        }
    }
}

pub fn builtin_registry() -> KernelRegistry {
    let mut r = KernelRegistry::new();
    register_builtins(&mut r);
    r
}
