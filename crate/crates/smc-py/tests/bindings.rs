use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(smc_py::smc_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("smc_py", m).unwrap();
        py.run(code, Some(&globals), None).unwrap();
    });
}

#[test]
fn toy_round_trip() {
    with_module(
        c"
p = smc_py.Problem.toy('two_clip')
assert p.dim == 1
value, x, sigma = p.enumerate()
assert abs(value) < 1e-9
q = smc_py.Problem.from_json(p.to_json())
assert q.objective([0.5]) == p.objective([0.5]) == 0.0
",
    );
}

#[test]
fn runs_certify_and_micp() {
    with_module(
        c"
p = smc_py.Problem.toy('abs_three')
t = smc_py.run(p, 'mm', seed=2)
assert t['termination'] == 'converged'
assert t['best_value'] >= -33 / 16 - 1e-9
assert smc_py.solve_micp(p)['status'] == 'optimal'
assert smc_py.certify(p, [0.0], [-0.1], [0.1], time_limit=0.0)['verdict'] == 'inconclusive'
try:
    smc_py.run(p, 'nope')
    raise AssertionError('unknown method accepted')
except ValueError:
    pass
",
    );
}
