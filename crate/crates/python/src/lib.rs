use pyo3::prelude::*;

#[pymodule]
fn pitchforge(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
