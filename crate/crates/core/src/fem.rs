//! Nodal Q1 finite-element assembly for the mechanics block: stiffness A,
//! displacement-pressure coupling B, and consistent load vectors.
//!
//! Displacements use bilinear (2D, plane strain, unit depth) or trilinear
//! (3D) shape functions with full 2-point Gauss quadrature per axis, exact
//! for Q1 on axis-aligned cells. Pressure test functions are piecewise
//! constant, so the coupling block reduces to per-cell integrals of the
//! shape-function divergence.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::{Side, StructuredGrid};
use crate::linalg::{SparseBuilder, SparseMatrix};
use crate::materials::MaterialTable;

/// Prescribed displacement components: (node, component) -> value (m).
/// Duplicate (node, component) pairs with conflicting values are rejected.
#[derive(Debug, Clone, Default)]
pub struct DirichletSet {
    entries: BTreeMap<(usize, usize), f64>,
}

impl DirichletSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constrain(&mut self, node: usize, component: usize, value: f64) -> Result<()> {
        if let Some(&old) = self.entries.get(&(node, component)) {
            if old != value {
                return Err(Error::invalid(format!(
                    "conflicting Dirichlet values {old} and {value} for node {node} component {component}"
                )));
            }
            return Ok(());
        }
        self.entries.insert((node, component), value);
        Ok(())
    }

    /// Zero normal displacement on one boundary plane (sliding support).
    pub fn roller(&mut self, grid: &StructuredGrid, axis: usize, side: Side) -> Result<()> {
        for n in grid.nodes_on_side(axis, side) {
            self.constrain(n, axis, 0.0)?;
        }
        Ok(())
    }

    /// All displacement components fixed to zero on one boundary plane.
    pub fn fixed(&mut self, grid: &StructuredGrid, axis: usize, side: Side) -> Result<()> {
        for n in grid.nodes_on_side(axis, side) {
            for c in 0..grid.spatial_dim() {
                self.constrain(n, c, 0.0)?;
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(n, c), &v)| (n, c, v))
    }

    pub fn value(&self, node: usize, component: usize) -> Option<f64> {
        self.entries.get(&(node, component)).copied()
    }

    fn dof_values(&self, dim: usize) -> BTreeMap<usize, f64> {
        self.entries
            .iter()
            .map(|(&(n, c), &v)| (n * dim + c, v))
            .collect()
    }
}

/// Per-cell quadrature data, shared by all cells of a uniform grid.
pub(crate) struct Q1Element {
    pub dim: usize,
    pub nodes_per_cell: usize,
    /// For each Gauss point: physical shape gradients [node][axis] and the
    /// quadrature weight times |J|.
    pub points: Vec<(Vec<[f64; 3]>, f64)>,
}

impl Q1Element {
    pub fn new(grid: &StructuredGrid) -> Self {
        let dim = grid.spatial_dim();
        let nodes_per_cell = 1 << dim;
        let h = grid.spacing();
        let g = 1.0 / 3.0f64.sqrt();
        let axis_pts = [-g, g];
        let detj_w = (0..dim).map(|d| h[d] / 2.0).product::<f64>();

        let mut points = Vec::new();
        let n_gp = 1 << dim;
        for gp in 0..n_gp {
            let xi: Vec<f64> = (0..dim).map(|d| axis_pts[(gp >> d) & 1]).collect();
            let mut grads = Vec::with_capacity(nodes_per_cell);
            for l in 0..nodes_per_cell {
                let sign: Vec<f64> = (0..dim)
                    .map(|d| if (l >> d) & 1 == 1 { 1.0 } else { -1.0 })
                    .collect();
                let mut grad = [0.0f64; 3];
                for a in 0..dim {
                    // dN/dxi_a = sign_a/2 * prod_{d != a} (1 + sign_d xi_d)/2,
                    // mapped with dxi/dx = 2/h.
                    let mut v = sign[a] / 2.0;
                    for d in 0..dim {
                        if d != a {
                            v *= (1.0 + sign[d] * xi[d]) / 2.0;
                        }
                    }
                    grad[a] = v * 2.0 / h[a];
                }
                grads.push(grad);
            }
            points.push((grads, detj_w));
        }
        Q1Element {
            dim,
            nodes_per_cell,
            points,
        }
    }

    /// Exact per-cell integrals of each shape-function gradient component.
    pub fn integrated_gradients(&self) -> Vec<[f64; 3]> {
        let mut out = vec![[0.0f64; 3]; self.nodes_per_cell];
        for (grads, w) in &self.points {
            for (l, g) in grads.iter().enumerate() {
                for a in 0..self.dim {
                    out[l][a] += g[a] * w;
                }
            }
        }
        out
    }
}

fn element_stiffness(elem: &Q1Element, lambda: f64, shear: f64) -> Vec<Vec<f64>> {
    let dim = elem.dim;
    let ndof = elem.nodes_per_cell * dim;
    let mut ke = vec![vec![0.0f64; ndof]; ndof];
    for (grads, w) in &elem.points {
        for l in 0..elem.nodes_per_cell {
            for m in 0..elem.nodes_per_cell {
                let dot: f64 = (0..dim).map(|d| grads[l][d] * grads[m][d]).sum();
                for a in 0..dim {
                    for b in 0..dim {
                        // lambda (div u)(div v) + 2 G eps(u):eps(v) for
                        // u = N_l e_a, v = N_m e_b.
                        let mut v = lambda * grads[l][a] * grads[m][b]
                            + shear * grads[l][b] * grads[m][a];
                        if a == b {
                            v += shear * dot;
                        }
                        ke[l * dim + a][m * dim + b] += v * w;
                    }
                }
            }
        }
    }
    ke
}

/// Assembles the mechanics stiffness with symmetric Dirichlet elimination:
/// constrained rows/columns are zeroed with 1 on the diagonal, and the
/// column contributions of prescribed values are returned as a load shift
/// to be added to the mechanical load vector (zero when all prescribed
/// values are zero).
pub fn assemble_stiffness(
    grid: &StructuredGrid,
    materials: &MaterialTable,
    dirichlet: &DirichletSet,
) -> Result<(SparseMatrix, Vec<f64>)> {
    materials.check_covers(grid)?;
    if dirichlet.is_empty() {
        eprintln!(
            "warning: no displacement constraints; the stiffness matrix is singular (rigid-body modes)"
        );
    }
    let dim = grid.spatial_dim();
    let n_dofs = grid.n_mech_dofs();
    let elem = Q1Element::new(grid);

    let mut builder = SparseBuilder::new(n_dofs, n_dofs);
    let mut ke_cache: BTreeMap<u32, Vec<Vec<f64>>> = BTreeMap::new();
    for cell in 0..grid.n_cells() {
        let region = grid.region_of(cell);
        let ke = ke_cache.entry(region).or_insert_with(|| {
            let m = materials.get(region).derived_moduli();
            element_stiffness(&elem, m.lambda, m.shear)
        });
        let nodes = grid.cell_nodes(cell);
        for (l, &nl) in nodes.iter().enumerate() {
            for (m, &nm) in nodes.iter().enumerate() {
                for a in 0..dim {
                    for b in 0..dim {
                        builder.add(nl * dim + a, nm * dim + b, ke[l * dim + a][m * dim + b]);
                    }
                }
            }
        }
    }
    let full = builder.finalize();

    // Symmetric elimination.
    let constrained = dirichlet.dof_values(dim);
    let mut shift = vec![0.0; n_dofs];
    let mut out = SparseBuilder::new(n_dofs, n_dofs);
    for (i, j, v) in full.iter() {
        if constrained.contains_key(&i) {
            continue;
        }
        match constrained.get(&j) {
            Some(&value) => shift[i] -= v * value,
            None => out.add(i, j, v),
        }
    }
    for (&dof, _) in &constrained {
        out.add(dof, dof, 1.0);
        shift[dof] = 0.0;
    }
    Ok((out.finalize(), shift))
}

/// Assembles the coupling block B (cells x mech dofs):
/// B(K, j) = b_K * integral over K of div(psi_j). Columns of constrained
/// displacement dofs are zeroed, consistently with the stiffness
/// elimination, so that the saddle blocks stay exact transposes.
pub fn assemble_coupling(
    grid: &StructuredGrid,
    materials: &MaterialTable,
    dirichlet: &DirichletSet,
) -> Result<SparseMatrix> {
    materials.check_covers(grid)?;
    let dim = grid.spatial_dim();
    let elem = Q1Element::new(grid);
    let grad_int = elem.integrated_gradients();
    let constrained = dirichlet.dof_values(dim);

    let mut builder = SparseBuilder::new(grid.n_cells(), grid.n_mech_dofs());
    for cell in 0..grid.n_cells() {
        let b = materials.get(grid.region_of(cell)).biot_coefficient;
        if b == 0.0 {
            continue;
        }
        for (l, &node) in grid.cell_nodes(cell).iter().enumerate() {
            for a in 0..dim {
                let dof = node * dim + a;
                if constrained.contains_key(&dof) {
                    continue;
                }
                builder.add(cell, dof, b * grad_int[l][a]);
            }
        }
    }
    Ok(builder.finalize())
}

/// Traction applied to the outer face of one boundary cell.
#[derive(Debug, Clone)]
pub struct FaceTraction {
    pub cell: usize,
    pub axis: usize,
    pub side: Side,
    /// Traction vector (Pa), length >= spatial dimension.
    pub traction: [f64; 3],
}

/// Uniform traction over every boundary face of one side of the domain.
pub fn side_tractions(
    grid: &StructuredGrid,
    axis: usize,
    side: Side,
    traction: [f64; 3],
) -> Vec<FaceTraction> {
    grid.boundary_faces()
        .iter()
        .filter(|f| f.axis == axis && f.side == side)
        .map(|f| FaceTraction {
            cell: f.cell,
            axis,
            side,
            traction,
        })
        .collect()
}

/// Consistent nodal loads from boundary tractions and gravity body force.
/// Tractions on faces that are not on the boundary are rejected.
pub fn assemble_mech_load(
    grid: &StructuredGrid,
    materials: &MaterialTable,
    tractions: &[FaceTraction],
    gravity: [f64; 3],
) -> Result<Vec<f64>> {
    materials.check_covers(grid)?;
    let dim = grid.spatial_dim();
    let dims = grid.dims();
    let mut load = vec![0.0; grid.n_mech_dofs()];

    for t in tractions {
        if t.axis >= dim {
            return Err(Error::invalid(format!(
                "traction axis {} out of range for a {}D grid",
                t.axis, dim
            )));
        }
        let coords = grid.cell_coords(t.cell);
        let on_boundary = match t.side {
            Side::Lo => coords[t.axis] == 0,
            Side::Hi => coords[t.axis] == dims[t.axis] - 1,
        };
        if !on_boundary {
            return Err(Error::invalid(format!(
                "traction face (cell {}, axis {}, {:?}) is interior",
                t.cell, t.axis, t.side
            )));
        }
        let area: f64 = (0..3)
            .filter(|&d| d != t.axis)
            .map(|d| grid.spacing()[d])
            .product();
        // Face nodes: cell corners with the local index on `axis` at the
        // face end. Q1 shape functions share the load equally on a
        // rectangle.
        let wanted = match t.side {
            Side::Lo => 0,
            Side::Hi => 1,
        };
        let face_nodes: Vec<usize> = grid
            .cell_nodes(t.cell)
            .iter()
            .enumerate()
            .filter(|(l, _)| (l >> t.axis) & 1 == wanted)
            .map(|(_, &n)| n)
            .collect();
        let share = area / face_nodes.len() as f64;
        for &n in &face_nodes {
            for c in 0..dim {
                load[n * dim + c] += t.traction[c] * share;
            }
        }
    }

    if gravity.iter().any(|&g| g != 0.0) {
        let v = grid.cell_volume();
        let nodes_per_cell = 1 << dim;
        for cell in 0..grid.n_cells() {
            let rho = materials.get(grid.region_of(cell)).solid_density;
            if rho == 0.0 {
                continue;
            }
            let share = rho * v / nodes_per_cell as f64;
            for &n in &grid.cell_nodes(cell) {
                for c in 0..dim {
                    load[n * dim + c] += gravity[c] * share;
                }
            }
        }
    }
    Ok(load)
}

/// Per-cell mean of div(u), integrated exactly over each cell.
pub fn cell_mean_divergence(grid: &StructuredGrid, u: &[f64]) -> Vec<f64> {
    let dim = grid.spatial_dim();
    debug_assert_eq!(u.len(), grid.n_mech_dofs());
    let elem = Q1Element::new(grid);
    let grad_int = elem.integrated_gradients();
    let inv_v = 1.0 / grid.cell_volume();
    (0..grid.n_cells())
        .map(|cell| {
            let mut acc = 0.0;
            for (l, &node) in grid.cell_nodes(cell).iter().enumerate() {
                for a in 0..dim {
                    acc += grad_int[l][a] * u[node * dim + a];
                }
            }
            acc * inv_v
        })
        .collect()
}
