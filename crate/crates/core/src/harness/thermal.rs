//! 13-node resistor-capacitor surrogate of a single-zone building.
//!
//! State: node temperatures in K above the outdoor temperature. Node 0 is the
//! indoor air, node 1 the furniture mass, nodes 2-10 three walls of three layers
//! each (inner to outer), nodes 11-12 the floor slab over the ground. The single
//! input is heating power in kW delivered to the air node.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plant::{PlantModel, PlantSpec};

/// Shipped discretization of [`RcNetwork::surrogate`].
pub const THERMAL_DATA: &str = include_str!("../../data/thermal13.json");

/// Outdoor temperature in °C the state is measured from.
pub const OUTDOOR_TEMPERATURE: f64 = 5.0;

/// Sampling period in hours.
pub const SAMPLE_HOURS: f64 = 0.25;

/// Lumped thermal network: capacities in kWh/K, conductances in kW/K.
#[derive(Debug, Clone, PartialEq)]
pub struct RcNetwork {
    pub capacity: Vec<f64>,
    /// Node-to-node conductances.
    pub links: Vec<(usize, usize, f64)>,
    /// Node-to-outdoor (or ground) conductances.
    pub ambient: Vec<(usize, f64)>,
    pub heated_node: usize,
}

impl RcNetwork {
    pub fn surrogate() -> Self {
        let mut capacity = vec![0.5, 3.0];
        let mut links = vec![(0, 1, 1.0)];
        let mut ambient = vec![(0, 0.3)];
        for wall in 0..3 {
            let first = 2 + 3 * wall;
            capacity.extend([2.0, 4.0, 2.0]);
            links.extend([(0, first, 0.5), (first, first + 1, 0.6), (first + 1, first + 2, 0.6)]);
            ambient.push((first + 2, 1.0));
        }
        capacity.extend([8.0, 8.0]);
        links.extend([(0, 11, 0.8), (11, 12, 0.5)]);
        ambient.push((12, 0.2));
        Self {
            capacity,
            links,
            ambient,
            heated_node: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.capacity.len()
    }

    /// Continuous-time `(Ac, Bc)` of `C dT/dt = -G T + e_heated q`.
    pub fn continuous(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.n();
        if self.capacity.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::invalid("capacity", "must be positive"));
        }
        let mut g = DMatrix::<f64>::zeros(n, n);
        for &(i, j, c) in &self.links {
            if i >= n || j >= n || i == j {
                return Err(Error::invalid("links", format!("bad link {i}-{j}")));
            }
            g[(i, i)] += c;
            g[(j, j)] += c;
            g[(i, j)] -= c;
            g[(j, i)] -= c;
        }
        for &(i, c) in &self.ambient {
            if i >= n {
                return Err(Error::invalid("ambient", format!("bad node {i}")));
            }
            g[(i, i)] += c;
        }
        let a = DMatrix::from_fn(n, n, |i, j| -g[(i, j)] / self.capacity[i]);
        let mut b = DVector::zeros(n);
        if self.heated_node >= n {
            return Err(Error::invalid("heated_node", "out of range"));
        }
        b[self.heated_node] = 1.0 / self.capacity[self.heated_node];
        Ok((a, b))
    }

    /// Zero-order-hold discretization through the exponential of the
    /// augmented matrix `[[Ac, Bc], [0, 0]] dt`.
    pub fn discretize(&self, dt_hours: f64) -> Result<PlantModel> {
        let (ac, bc) = self.continuous()?;
        let n = self.n();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&(ac * dt_hours));
        m.view_mut((0, n), (n, 1)).copy_from(&(bc * dt_hours));
        let e = m.exp();
        PlantModel::new(e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, 1)).into_owned())
    }
}

/// The plant spec written to `data/thermal13.json`.
pub fn surrogate_spec() -> Result<PlantSpec> {
    let model = RcNetwork::surrogate().discretize(SAMPLE_HOURS)?;
    let mut spec = PlantSpec::from_model(&model, Some("thermal-rc13".into()));
    spec.description = Some(format!(
        "13-node RC building surrogate, ZOH at {SAMPLE_HOURS} h; state in K above outdoor, input heating power in kW to node 0 (air)"
    ));
    Ok(spec)
}

/// Plant from the shipped data file.
pub fn thermal_plant_spec() -> Result<PlantSpec> {
    PlantSpec::from_json(THERMAL_DATA)
}
