//! Python bindings: model loading, rigid-body quantities, the allocation QP
//! and closed-loop simulation runs.
//!
//! Matrices cross the boundary as lists of rows; wrap them with `numpy.array`.

use std::collections::HashMap;

use momflight::cli::verify::run_checks;
use momflight::control::ControllerGains;
use momflight::dynamics::{self, Configuration};
use momflight::model::{initial_joint_configuration, parse_model, surrogate_humanoid, RobotModel};
use momflight::qp::{ActiveSetSolver, Bounds, BoxQp};
use momflight::sim::{csv_header, scenario_by_name, ControlUpdate, LogRecord, Simulation};
use momflight::spatial::{UnitQuaternion, Vec3};
use nalgebra::{DMatrix, DVector, Dim, Matrix, RawStorage};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(m: &Matrix<f64, R, C, S>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn flat<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(v: &Matrix<f64, R, C, S>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn matrix(data: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = data.len();
    let m = data.first().map_or(0, Vec::len);
    if data.iter().any(|r| r.len() != m) {
        return Err(value_error("ragged matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| data[i][j]))
}

fn fixed3(v: Vec<f64>, what: &str) -> PyResult<Vec3> {
    if v.len() != 3 {
        return Err(value_error(format!("{what} needs 3 entries, got {}", v.len())));
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

/// Kinematic tree with thrusters.
#[pyclass(name = "Model", module = "momflight_py", frozen)]
pub struct PyModel {
    inner: RobotModel,
}

impl PyModel {
    fn configuration(
        &self,
        joints: Option<Vec<f64>>,
        position: Option<Vec<f64>>,
        orientation: Option<Vec<f64>>,
    ) -> PyResult<Configuration> {
        let mut q = Configuration::neutral(&self.inner);
        if let Some(s) = joints {
            if s.len() != self.inner.dof() {
                return Err(value_error(format!("expected {} joint values, got {}", self.inner.dof(), s.len())));
            }
            q.joints = DVector::from_vec(s);
        }
        if let Some(p) = position {
            q.base_position = fixed3(p, "position")?;
        }
        if let Some(o) = orientation {
            if o.len() != 4 {
                return Err(value_error("orientation is a quaternion (w, x, y, z)"));
            }
            let quat = UnitQuaternion::new(o[0], o[1], o[2], o[3]).map_err(value_error)?;
            q.base_rotation = quat.to_rotation();
        }
        Ok(q)
    }

    fn velocity(&self, nu: Vec<f64>) -> PyResult<DVector<f64>> {
        if nu.len() != self.inner.nv() {
            return Err(value_error(format!("expected {} velocity values, got {}", self.inner.nv(), nu.len())));
        }
        Ok(DVector::from_vec(nu))
    }
}

#[pymethods]
impl PyModel {
    /// The 25-joint, four-engine humanoid used by the scenarios.
    #[staticmethod]
    fn surrogate() -> Self {
        PyModel { inner: surrogate_humanoid() }
    }

    #[staticmethod]
    fn from_urdf(text: &str) -> PyResult<Self> {
        parse_model(text).map(|inner| PyModel { inner }).map_err(value_error)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::from_urdf(&text)
    }

    fn to_urdf(&self) -> String {
        self.inner.to_urdf()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn dof(&self) -> usize {
        self.inner.dof()
    }

    #[getter]
    fn nv(&self) -> usize {
        self.inner.nv()
    }

    #[getter]
    fn total_mass(&self) -> f64 {
        self.inner.total_mass()
    }

    #[getter]
    fn joint_names(&self) -> Vec<String> {
        self.inner.joints.iter().map(|j| j.name.clone()).collect()
    }

    #[getter]
    fn link_names(&self) -> Vec<String> {
        self.inner.links.iter().map(|l| l.name.clone()).collect()
    }

    #[getter]
    fn thruster_names(&self) -> Vec<String> {
        self.inner.thrusters.iter().map(|t| t.name.clone()).collect()
    }

    /// Joint angles the simulations start from.
    fn initial_joints(&self) -> Vec<f64> {
        flat(&initial_joint_configuration(&self.inner))
    }

    #[pyo3(signature = (joints=None, position=None, orientation=None))]
    fn mass_matrix(&self, joints: Option<Vec<f64>>, position: Option<Vec<f64>>, orientation: Option<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let q = self.configuration(joints, position, orientation)?;
        Ok(rows(&dynamics::mass_matrix(&self.inner, &q)))
    }

    /// Coriolis, centrifugal and gravity forces.
    #[pyo3(signature = (velocity, joints=None, position=None, orientation=None))]
    fn bias_forces(
        &self,
        velocity: Vec<f64>,
        joints: Option<Vec<f64>>,
        position: Option<Vec<f64>>,
        orientation: Option<Vec<f64>>,
    ) -> PyResult<Vec<f64>> {
        let q = self.configuration(joints, position, orientation)?;
        let nu = self.velocity(velocity)?;
        Ok(flat(&dynamics::bias_forces(&self.inner, &q, &nu)))
    }

    #[pyo3(signature = (joints=None, position=None, orientation=None))]
    fn centroidal_momentum_matrix(
        &self,
        joints: Option<Vec<f64>>,
        position: Option<Vec<f64>>,
        orientation: Option<Vec<f64>>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let q = self.configuration(joints, position, orientation)?;
        Ok(rows(&dynamics::centroidal_momentum_matrix(&self.inner, &q)))
    }

    /// Centroidal momentum `(linear; angular)`.
    #[pyo3(signature = (velocity, joints=None, position=None, orientation=None))]
    fn momentum(
        &self,
        velocity: Vec<f64>,
        joints: Option<Vec<f64>>,
        position: Option<Vec<f64>>,
        orientation: Option<Vec<f64>>,
    ) -> PyResult<Vec<f64>> {
        let q = self.configuration(joints, position, orientation)?;
        let nu = self.velocity(velocity)?;
        Ok(flat(&dynamics::momentum(&self.inner, &q, &nu)))
    }

    #[pyo3(signature = (joints=None, position=None, orientation=None))]
    fn center_of_mass(&self, joints: Option<Vec<f64>>, position: Option<Vec<f64>>, orientation: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let q = self.configuration(joints, position, orientation)?;
        Ok(flat(&dynamics::center_of_mass(&self.inner, &q)))
    }

    #[pyo3(signature = (joints=None, position=None, orientation=None))]
    fn locked_inertia(&self, joints: Option<Vec<f64>>, position: Option<Vec<f64>>, orientation: Option<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let q = self.configuration(joints, position, orientation)?;
        Ok(rows(&dynamics::locked_inertia(&self.inner, &q)))
    }

    /// 6×4 map from engine thrusts to the centroidal wrench.
    #[pyo3(signature = (joints=None, position=None, orientation=None))]
    fn thrust_wrench_map(&self, joints: Option<Vec<f64>>, position: Option<Vec<f64>>, orientation: Option<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let q = self.configuration(joints, position, orientation)?;
        Ok(rows(&dynamics::thrust_wrench_map(&self.inner, &q)))
    }

    /// Mixed Jacobian of a link or thruster frame, rows `(linear; angular)`.
    #[pyo3(signature = (frame, joints=None, position=None, orientation=None))]
    fn frame_jacobian(
        &self,
        frame: &str,
        joints: Option<Vec<f64>>,
        position: Option<Vec<f64>>,
        orientation: Option<Vec<f64>>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let q = self.configuration(joints, position, orientation)?;
        dynamics::frame_jacobian_by_name(&self.inner, &q, frame)
            .map(|j| rows(&j))
            .map_err(value_error)
    }

    #[pyo3(signature = (velocity, joints=None, position=None, orientation=None))]
    fn energy(
        &self,
        velocity: Vec<f64>,
        joints: Option<Vec<f64>>,
        position: Option<Vec<f64>>,
        orientation: Option<Vec<f64>>,
    ) -> PyResult<(f64, f64)> {
        let q = self.configuration(joints, position, orientation)?;
        let nu = self.velocity(velocity)?;
        Ok((
            dynamics::kinetic_energy(&self.inner, &q, &nu),
            dynamics::potential_energy(&self.inner, &q),
        ))
    }

    /// Runs the self-checks; returns `(name, residual, tolerance, passed)` tuples.
    #[pyo3(signature = (seed=0))]
    fn verify(&self, seed: u64) -> Vec<(String, f64, f64, bool)> {
        let gains = ControllerGains::paper_defaults(initial_joint_configuration(&self.inner));
        run_checks(&self.inner, &gains, seed)
            .into_iter()
            .map(|c| (c.name, c.residual, c.tolerance, c.pass))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Model('{}', dof={}, mass={:.3})", self.inner.name, self.inner.dof(), self.inner.total_mass())
    }
}

/// Minimizes `½xᵀHx + gᵀx` over `lower ≤ x ≤ upper`.
#[pyfunction]
fn solve_box_qp(
    hessian: Vec<Vec<f64>>,
    gradient: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
) -> PyResult<HashMap<String, Py<PyAny>>> {
    let bounds = Bounds {
        lower: DVector::from_vec(lower),
        upper: DVector::from_vec(upper),
    };
    let qp = BoxQp::new(matrix(hessian)?, DVector::from_vec(gradient), bounds).map_err(value_error)?;
    let sol = ActiveSetSolver::new().solve(&qp);
    Python::attach(|py| {
        let mut out: HashMap<String, Py<PyAny>> = HashMap::new();
        out.insert("x".into(), flat(&sol.x).into_pyobject(py)?.into_any().unbind());
        out.insert("objective".into(), sol.objective.into_pyobject(py)?.into_any().unbind());
        out.insert("kkt_residual".into(), sol.kkt_residual.into_pyobject(py)?.into_any().unbind());
        out.insert("iterations".into(), sol.iterations.into_pyobject(py)?.into_any().unbind());
        out.insert("converged".into(), sol.converged.into_pyobject(py)?.to_owned().into_any().unbind());
        Ok(out)
    })
}

/// Closed-loop flight of a scenario (`sim1`, `sim2`, `hover`).
#[pyclass(name = "Simulation", module = "momflight_py", unsendable)]
pub struct PySimulation {
    inner: Simulation,
    records: Vec<LogRecord>,
}

#[pymethods]
impl PySimulation {
    #[new]
    #[pyo3(signature = (model, scenario="sim1", dt=1e-3, perturb=1.0, every_stage=false))]
    fn new(model: &PyModel, scenario: &str, dt: f64, perturb: f64, every_stage: bool) -> PyResult<Self> {
        let scenario = scenario_by_name(scenario, perturb).map_err(value_error)?;
        let gains = ControllerGains::paper_defaults(initial_joint_configuration(&model.inner));
        let mut inner = Simulation::new(model.inner.clone(), &scenario, gains, dt).map_err(value_error)?;
        if every_stage {
            inner.update = ControlUpdate::EveryStage;
        }
        Ok(PySimulation { inner, records: Vec::new() })
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time()
    }

    /// Advances one step and returns the log row.
    fn step(&mut self) -> PyResult<Vec<f64>> {
        let r = self.inner.step().map_err(value_error)?;
        let row = row_values(&r);
        self.records.push(r);
        Ok(row)
    }

    /// Advances by `duration` seconds; returns the new log rows.
    fn run(&mut self, duration: f64) -> PyResult<Vec<Vec<f64>>> {
        let new = self.inner.run(duration).map_err(value_error)?;
        let out = new.iter().map(row_values).collect();
        self.records.extend(new);
        Ok(out)
    }

    /// Column names of the rows returned by `step` and `run`.
    fn columns(&self) -> Vec<String> {
        csv_header(self.inner.model.dof()).split(',').map(str::to_string).collect()
    }

    /// Writes every row produced so far as CSV.
    fn write_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        momflight::sim::write_csv(std::io::BufWriter::new(file), self.inner.model.dof(), &self.records)
            .map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    /// `(base position, quaternion (w, x, y, z), joints, velocity)`.
    fn state(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let s = self.inner.state();
        (flat(&s.base_position), flat(&s.orientation), flat(&s.joints), flat(&s.velocity))
    }
}

fn row_values(r: &LogRecord) -> Vec<f64> {
    r.csv_row().split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect()
}

#[pymodule]
fn momflight_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(solve_box_qp, m)?)?;
    Ok(())
}
