//! Simplicial meshes over lattice-aligned cubes and lattice balls.
//!
//! Nodes live on the global grid `1/2 + h Z^d` with `h = 2^-k`, so every
//! grid cell (and every simplex of its Kuhn triangulation) lies inside a
//! single coefficient cell `z + [-1/2, 1/2)^d`. Nodes are addressed by their
//! integer grid key `k` with `x = 1/2 + h k`, which lets fields be moved
//! between meshes that share the grid.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::lagrangian::{CellBox, MAX_DIM};
use crate::sparse::{Assembler, CsrMatrix};

/// Default cap on the number of mesh nodes.
pub const DEFAULT_NODE_CAP: usize = 5_000_000;

#[derive(Clone, Debug, PartialEq)]
pub enum DomainShape {
    Cube { n: u32 },
    Box,
    LatticeBall { radius: f64 },
    Submesh,
}

#[derive(Clone, Debug, Default)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        ScalarField::new(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }

    pub fn add_scaled(&self, other: &ScalarField, s: f64) -> ScalarField {
        ScalarField::new(self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect())
    }
}

/// Per-element constant vectors, `dim` components per element.
#[derive(Clone, Debug, Default)]
pub struct VectorField {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(dim: usize, elements: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; dim * elements],
        }
    }

    pub fn element(&self, e: usize) -> &[f64] {
        &self.values[e * self.dim..(e + 1) * self.dim]
    }

    pub fn element_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.values[e * self.dim..(e + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add_scaled(&self, other: &VectorField, s: f64) -> VectorField {
        VectorField {
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect(),
        }
    }

    /// Component `c` as a per-element scalar array.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.dim).copied().collect()
    }
}

/// A set of whole elements of a mesh.
#[derive(Clone, Debug)]
pub struct Subdomain {
    pub elements: Vec<u32>,
    pub volume: f64,
}

#[derive(Debug)]
pub struct MeshDomain {
    dim: usize,
    h: f64,
    shape: DomainShape,
    keys: Vec<i64>,
    coords: Vec<f64>,
    elements: Vec<u32>,
    element_kind: Vec<u8>,
    /// Barycentric gradients per Kuhn simplex type, `(d+1) * d` each.
    reference_gradients: Vec<Vec<f64>>,
    element_volume: f64,
    barycenters: Vec<f64>,
    boundary: Vec<bool>,
    key_lookup: HashMap<Vec<i64>, u32>,
    /// Nodes per axis when the node set is a full tensor grid in
    /// lexicographic order (axis 0 fastest).
    grid_counts: Option<Vec<usize>>,
    assembler: OnceLock<Assembler>,
    laplacian: OnceLock<CsrMatrix>,
}

fn grid_key(x: f64, h: f64) -> Result<i64> {
    let k = (x - 0.5) / h;
    let r = k.round();
    if (k - r).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "coordinate {x} is not on the grid 1/2 + {h} Z"
        )));
    }
    Ok(r as i64)
}

pub fn validate_mesh_width(h: f64) -> Result<()> {
    if !(h > 0.0 && h <= 1.0) || (1.0 / h).log2().fract().abs() > 1e-12 {
        return Err(Error::Config(format!("mesh width must be 2^-k with k >= 0, got {h}")));
    }
    Ok(())
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(d - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, d - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

fn factorial(d: usize) -> usize {
    (1..=d).product()
}

/// Kuhn cube `[0,1]^d` split into `d!` simplices; vertices as corner bitmasks.
fn kuhn_simplices(d: usize) -> Vec<Vec<usize>> {
    permutations(d)
        .into_iter()
        .map(|perm| {
            let mut verts = vec![0usize];
            let mut cur = 0usize;
            for &axis in &perm {
                cur |= 1 << axis;
                verts.push(cur);
            }
            verts
        })
        .collect()
}

fn reference_gradients(d: usize, h: f64) -> Vec<Vec<f64>> {
    kuhn_simplices(d)
        .iter()
        .map(|verts| {
            let corner = |mask: usize, axis: usize| if mask & (1 << axis) != 0 { h } else { 0.0 };
            let b = nalgebra::DMatrix::from_fn(d, d, |i, k| corner(verts[k + 1], i) - corner(verts[0], i));
            let inv = b.try_inverse().expect("Kuhn simplex is nondegenerate");
            let mut g = vec![0.0; (d + 1) * d];
            for k in 1..=d {
                for i in 0..d {
                    g[k * d + i] = inv[(k - 1, i)];
                    g[i] -= inv[(k - 1, i)];
                }
            }
            g
        })
        .collect()
}

impl MeshDomain {
    /// Kuhn-triangulated grid on the cube `(-3^n/2, 3^n/2)^d`.
    pub fn cube(n: u32, h: f64, d: usize) -> Result<Self> {
        Self::cube_with_cap(n, h, d, DEFAULT_NODE_CAP)
    }

    pub fn cube_with_cap(n: u32, h: f64, d: usize, node_cap: usize) -> Result<Self> {
        let b = CellBox::cube(n, d);
        let mut mesh = Self::cell_box_with_cap(&b, h, node_cap)?;
        mesh.shape = DomainShape::Cube { n };
        Ok(mesh)
    }

    /// Mesh of the union of the cells of `cell_box`.
    pub fn cell_box(cell_box: &CellBox, h: f64) -> Result<Self> {
        Self::cell_box_with_cap(cell_box, h, DEFAULT_NODE_CAP)
    }

    pub fn cell_box_with_cap(cell_box: &CellBox, h: f64, node_cap: usize) -> Result<Self> {
        let (lo, hi) = cell_box.bounds();
        Self::grid_region(&lo, &hi, h, node_cap, None, DomainShape::Box)
    }

    /// Cube `[c - s/2, c + s/2]^d` around a lattice point `c` for odd side `s`.
    pub fn centered_cube(center: &[i64], side: usize, h: f64) -> Result<Self> {
        let extents = vec![side; center.len()];
        let mut b = CellBox::centered(&extents);
        for (o, c) in b.origin.iter_mut().zip(center) {
            *o += c;
        }
        Self::cell_box(&b, h)
    }

    /// Lattice ball: all grid simplices whose barycenter lies within
    /// `radius` of the origin.
    pub fn lattice_ball(radius: f64, h: f64, d: usize) -> Result<Self> {
        let half = (radius + 0.5).ceil() + 0.5;
        let lo = vec![-half; d];
        let hi = vec![half; d];
        let r2 = radius * radius;
        let filter = move |b: &[f64]| b.iter().map(|v| v * v).sum::<f64>() <= r2;
        Self::grid_region(&lo, &hi, h, DEFAULT_NODE_CAP, Some(&filter), DomainShape::LatticeBall { radius })
    }

    fn grid_region(
        lo: &[f64],
        hi: &[f64],
        h: f64,
        node_cap: usize,
        filter: Option<&dyn Fn(&[f64]) -> bool>,
        shape: DomainShape,
    ) -> Result<Self> {
        validate_mesh_width(h)?;
        let d = lo.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::Config(format!("mesh dimension must be 1..=3, got {d}")));
        }
        let key_lo: Vec<i64> = lo.iter().map(|&x| grid_key(x, h)).collect::<Result<_>>()?;
        let key_hi: Vec<i64> = hi.iter().map(|&x| grid_key(x, h)).collect::<Result<_>>()?;
        let counts: Vec<usize> = key_lo.iter().zip(&key_hi).map(|(a, b)| (b - a) as usize).collect();
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Config("empty mesh region".into()));
        }
        let node_estimate = counts.iter().map(|c| (c + 1) as f64).product::<f64>();
        if node_estimate > node_cap as f64 {
            return Err(Error::Resource(format!(
                "mesh would need {node_estimate:.0} nodes, above the cap of {node_cap}"
            )));
        }
        let node_counts: Vec<usize> = counts.iter().map(|c| c + 1).collect();
        let total_nodes: usize = node_counts.iter().product();
        let node_linear = |k: &[usize]| -> usize {
            let mut idx = 0;
            for i in (0..d).rev() {
                idx = idx * node_counts[i] + k[i];
            }
            idx
        };

        let simplices = kuhn_simplices(d);
        let ref_grads = reference_gradients(d, h);
        let n_cells: usize = counts.iter().product();

        let mut raw_elements: Vec<u32> = Vec::new();
        let mut kinds: Vec<u8> = Vec::new();
        let mut barys: Vec<f64> = Vec::new();
        let mut cell = vec![0usize; d];
        let mut corner = vec![0usize; d];
        let mut b = vec![0.0; d];
        for flat in 0..n_cells {
            let mut rem = flat;
            for i in 0..d {
                cell[i] = rem % counts[i];
                rem /= counts[i];
            }
            for (kind, verts) in simplices.iter().enumerate() {
                b.iter_mut().for_each(|v| *v = 0.0);
                for &mask in verts {
                    for i in 0..d {
                        let off = (mask >> i) & 1;
                        b[i] += 0.5 + h * (key_lo[i] + (cell[i] + off) as i64) as f64;
                    }
                }
                b.iter_mut().for_each(|v| *v /= (d + 1) as f64);
                if let Some(f) = filter {
                    if !f(&b) {
                        continue;
                    }
                }
                for &mask in verts {
                    for i in 0..d {
                        corner[i] = cell[i] + ((mask >> i) & 1);
                    }
                    raw_elements.push(node_linear(&corner) as u32);
                }
                kinds.push(kind as u8);
                barys.extend_from_slice(&b);
            }
        }
        if kinds.is_empty() {
            return Err(Error::Config("mesh region contains no elements".into()));
        }

        // Compact the node numbering, keeping lexicographic order.
        let mut used = vec![false; total_nodes];
        for &v in &raw_elements {
            used[v as usize] = true;
        }
        let mut new_index = vec![u32::MAX; total_nodes];
        let mut keys = Vec::new();
        let mut coords = Vec::new();
        let mut next = 0u32;
        let mut k = vec![0usize; d];
        for (lin, &u) in used.iter().enumerate() {
            if !u {
                continue;
            }
            let mut rem = lin;
            for i in 0..d {
                k[i] = rem % node_counts[i];
                rem /= node_counts[i];
                let key = key_lo[i] + k[i] as i64;
                keys.push(key);
                coords.push(0.5 + h * key as f64);
            }
            new_index[lin] = next;
            next += 1;
        }
        let elements: Vec<u32> = raw_elements.iter().map(|&v| new_index[v as usize]).collect();
        let n_nodes = next as usize;
        let full_grid = n_nodes == total_nodes;

        let boundary = boundary_nodes(&elements, d, n_nodes);
        let key_lookup = (0..n_nodes)
            .map(|i| (keys[i * d..(i + 1) * d].to_vec(), i as u32))
            .collect();

        Ok(Self {
            dim: d,
            h,
            shape,
            keys,
            coords,
            elements,
            element_kind: kinds,
            reference_gradients: ref_grads,
            element_volume: h.powi(d as i32) / factorial(d) as f64,
            barycenters: barys,
            boundary,
            key_lookup,
            grid_counts: if full_grid { Some(node_counts) } else { None },
            assembler: OnceLock::new(),
            laplacian: OnceLock::new(),
        })
    }

    /// Mesh made of the elements of `sub`, with node map `new -> old`.
    pub fn submesh(&self, sub: &Subdomain) -> Result<(MeshDomain, Vec<u32>)> {
        if sub.elements.is_empty() {
            return Err(Error::Domain("empty subdomain".into()));
        }
        let d = self.dim;
        let mut map = HashMap::new();
        let mut old_of_new: Vec<u32> = Vec::new();
        let mut elements = Vec::with_capacity(sub.elements.len() * (d + 1));
        let mut kinds = Vec::with_capacity(sub.elements.len());
        let mut barys = Vec::with_capacity(sub.elements.len() * d);
        let mut sorted = sub.elements.clone();
        sorted.sort_unstable();
        // Number nodes in increasing old index so lexicographic order survives.
        let mut nodes: Vec<u32> = sorted.iter().flat_map(|&e| self.element_nodes(e as usize).to_vec()).collect();
        nodes.sort_unstable();
        nodes.dedup();
        for &old in &nodes {
            map.insert(old, old_of_new.len() as u32);
            old_of_new.push(old);
        }
        for &e in &sorted {
            for &v in self.element_nodes(e as usize) {
                elements.push(map[&v]);
            }
            kinds.push(self.element_kind[e as usize]);
            barys.extend_from_slice(self.barycenter(e as usize));
        }
        let n_nodes = old_of_new.len();
        let mut keys = Vec::with_capacity(n_nodes * d);
        let mut coords = Vec::with_capacity(n_nodes * d);
        for &old in &old_of_new {
            keys.extend_from_slice(self.node_key(old as usize));
            coords.extend_from_slice(self.node(old as usize));
        }
        let boundary = boundary_nodes(&elements, d, n_nodes);
        let key_lookup = (0..n_nodes)
            .map(|i| (keys[i * d..(i + 1) * d].to_vec(), i as u32))
            .collect();
        Ok((
            MeshDomain {
                dim: d,
                h: self.h,
                shape: DomainShape::Submesh,
                keys,
                coords,
                elements,
                element_kind: kinds,
                reference_gradients: self.reference_gradients.clone(),
                element_volume: self.element_volume,
                barycenters: barys,
                boundary,
                key_lookup,
                grid_counts: None,
                assembler: OnceLock::new(),
                laplacian: OnceLock::new(),
            },
            old_of_new,
        ))
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn mesh_width(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    pub fn node_count(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn element_count(&self) -> usize {
        self.element_kind.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn node_key(&self, i: usize) -> &[i64] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn node_by_key(&self, key: &[i64]) -> Option<usize> {
        self.key_lookup.get(key).map(|&i| i as usize)
    }

    /// Node located at `x`, if `x` is a node of this mesh.
    pub fn node_at(&self, x: &[f64]) -> Option<usize> {
        let key: Vec<i64> = x.iter().map(|&v| grid_key(v, self.h)).collect::<Result<_>>().ok()?;
        self.node_by_key(&key)
    }

    pub fn element_nodes(&self, e: usize) -> &[u32] {
        let n = self.dim + 1;
        &self.elements[e * n..(e + 1) * n]
    }

    /// Gradients of the barycentric coordinates on element `e`, row-major
    /// `(d+1) x d`.
    pub fn element_gradients(&self, e: usize) -> &[f64] {
        &self.reference_gradients[self.element_kind[e] as usize]
    }

    pub fn element_volume(&self, _e: usize) -> f64 {
        self.element_volume
    }

    pub fn barycenter(&self, e: usize) -> &[f64] {
        &self.barycenters[e * self.dim..(e + 1) * self.dim]
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn total_volume(&self) -> f64 {
        self.element_volume * self.element_count() as f64
    }

    pub fn grid_counts(&self) -> Option<&[usize]> {
        self.grid_counts.as_deref()
    }

    /// Bounding box of the node coordinates.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for i in 0..self.node_count() {
            for (c, &x) in self.node(i).iter().enumerate() {
                lo[c] = lo[c].min(x);
                hi[c] = hi[c].max(x);
            }
        }
        (lo, hi)
    }

    /// Sparse pattern for the interior nodes, built on first use.
    pub fn assembler(&self) -> &Assembler {
        self.assembler.get_or_init(|| Assembler::new(self))
    }

    /// Stiffness matrix of `-Δ` on the interior nodes, built on first use.
    pub fn laplacian(&self) -> &CsrMatrix {
        self.laplacian.get_or_init(|| {
            let asm = self.assembler();
            let d = self.dim;
            let mut mat = asm.zero_matrix();
            let n = d + 1;
            let mut local = vec![0.0; n * n];
            for e in 0..self.element_count() {
                let g = self.element_gradients(e);
                let vol = self.element_volume(e);
                for a in 0..n {
                    for b in 0..n {
                        let mut s = 0.0;
                        for i in 0..d {
                            s += g[a * d + i] * g[b * d + i];
                        }
                        local[a * n + b] = vol * s;
                    }
                }
                asm.add_element(&mut mat, e, &local);
            }
            mat
        })
    }

    pub fn interpolate(&self, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        ScalarField::new((0..self.node_count()).map(|i| f(self.node(i))).collect())
    }

    pub fn full(&self) -> Subdomain {
        Subdomain {
            elements: (0..self.element_count() as u32).collect(),
            volume: self.total_volume(),
        }
    }

    /// Elements whose barycenter lies in the closed ball `B_r(center)`.
    pub fn ball(&self, center: &[f64], r: f64) -> Subdomain {
        let r2 = r * r;
        self.select(|b| b.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum::<f64>() <= r2)
    }

    /// Elements whose barycenter lies in the box `[lo, hi]`.
    pub fn box_region(&self, lo: &[f64], hi: &[f64]) -> Subdomain {
        self.select(|b| b.iter().enumerate().all(|(i, &x)| x >= lo[i] && x <= hi[i]))
    }

    pub fn select(&self, keep: impl Fn(&[f64]) -> bool) -> Subdomain {
        let elements: Vec<u32> = (0..self.element_count())
            .filter(|&e| keep(self.barycenter(e)))
            .map(|e| e as u32)
            .collect();
        let volume = elements.len() as f64 * self.element_volume;
        Subdomain { elements, volume }
    }

    fn check_scalar(&self, field: &ScalarField) -> Result<()> {
        if field.len() != self.node_count() {
            return Err(Error::Domain(format!(
                "scalar field has {} values for a mesh with {} nodes",
                field.len(),
                self.node_count()
            )));
        }
        Ok(())
    }

    fn check_vector(&self, field: &VectorField) -> Result<()> {
        if field.dim != self.dim || field.values.len() != self.dim * self.element_count() {
            return Err(Error::Domain(format!(
                "vector field of shape {}x{} does not match mesh ({} elements, d = {})",
                field.len(),
                field.dim,
                self.element_count(),
                self.dim
            )));
        }
        Ok(())
    }

    fn check_subdomain(&self, sub: &Subdomain) -> Result<()> {
        if sub.elements.is_empty() {
            return Err(Error::Domain("empty subdomain".into()));
        }
        if sub.elements.iter().any(|&e| e as usize >= self.element_count()) {
            return Err(Error::Domain("subdomain references elements outside the mesh".into()));
        }
        Ok(())
    }

    /// Gradient of the piecewise-affine interpolant, one vector per element.
    pub fn gradient(&self, field: &ScalarField) -> Result<VectorField> {
        self.check_scalar(field)?;
        let d = self.dim;
        let mut out = VectorField::zeros(d, self.element_count());
        for e in 0..self.element_count() {
            let g = self.element_gradients(e);
            let nodes = self.element_nodes(e);
            let dst = out.element_mut(e);
            for (a, &v) in nodes.iter().enumerate() {
                let u = field.values[v as usize];
                for i in 0..d {
                    dst[i] += u * g[a * d + i];
                }
            }
        }
        Ok(out)
    }

    /// Gradient on a single element, written into `out[..d]`.
    pub fn element_gradient(&self, values: &[f64], e: usize, out: &mut [f64]) {
        let d = self.dim;
        let g = self.element_gradients(e);
        out[..d].iter_mut().for_each(|v| *v = 0.0);
        for (a, &v) in self.element_nodes(e).iter().enumerate() {
            let u = values[v as usize];
            for i in 0..d {
                out[i] += u * g[a * d + i];
            }
        }
    }

    /// Normalized `L^2` norm `(⨍_U |u|^2)^{1/2}` of the affine interpolant,
    /// integrated exactly.
    pub fn norm_l2_mean(&self, field: &ScalarField, sub: &Subdomain) -> Result<f64> {
        self.check_scalar(field)?;
        self.check_subdomain(sub)?;
        let d = self.dim;
        let c = 1.0 / ((d + 1) * (d + 2)) as f64;
        let mut total = 0.0;
        for &e in &sub.elements {
            let nodes = self.element_nodes(e as usize);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for &v in nodes {
                let u = field.values[v as usize];
                s += u;
                s2 += u * u;
            }
            total += self.element_volume * c * (s2 + s * s);
        }
        Ok((total / sub.volume).sqrt())
    }

    /// Normalized `L^2` norm of a per-element vector field.
    pub fn norm_l2_mean_vector(&self, field: &VectorField, sub: &Subdomain) -> Result<f64> {
        self.check_vector(field)?;
        self.check_subdomain(sub)?;
        let total: f64 = sub
            .elements
            .iter()
            .map(|&e| field.element(e as usize).iter().map(|v| v * v).sum::<f64>())
            .sum();
        Ok((total * self.element_volume / sub.volume).sqrt())
    }

    /// Normalized `L^q` norm of a per-element vector field.
    pub fn norm_lq_mean_vector(&self, field: &VectorField, sub: &Subdomain, q: f64) -> Result<f64> {
        self.check_vector(field)?;
        self.check_subdomain(sub)?;
        let total: f64 = sub
            .elements
            .iter()
            .map(|&e| field.element(e as usize).iter().map(|v| v * v).sum::<f64>().powf(q / 2.0))
            .sum();
        Ok((total * self.element_volume / sub.volume).powf(1.0 / q))
    }

    /// Volume average `(u)_U`.
    pub fn mean(&self, field: &ScalarField, sub: &Subdomain) -> Result<f64> {
        self.check_scalar(field)?;
        self.check_subdomain(sub)?;
        let n = (self.dim + 1) as f64;
        let total: f64 = sub
            .elements
            .iter()
            .map(|&e| self.element_nodes(e as usize).iter().map(|&v| field.values[v as usize]).sum::<f64>() / n)
            .sum();
        Ok(total * self.element_volume / sub.volume)
    }

    /// Volume average of a per-element vector field.
    pub fn mean_vector(&self, field: &VectorField, sub: &Subdomain) -> Result<Vec<f64>> {
        self.check_vector(field)?;
        self.check_subdomain(sub)?;
        let mut acc = vec![0.0; self.dim];
        for &e in &sub.elements {
            for (a, v) in acc.iter_mut().zip(field.element(e as usize)) {
                *a += v;
            }
        }
        Ok(acc.into_iter().map(|a| a * self.element_volume / sub.volume).collect())
    }

    /// Restriction of a nodal field to the submesh of `sub`.
    pub fn restrict(&self, field: &ScalarField, sub: &Subdomain) -> Result<(MeshDomain, ScalarField)> {
        self.check_scalar(field)?;
        let (mesh, map) = self.submesh(sub)?;
        let values = map.iter().map(|&old| field.values[old as usize]).collect();
        Ok((mesh, ScalarField::new(values)))
    }

    /// Values of `field` (defined on `other`) at the nodes of this mesh;
    /// nodes absent from `other` are reported as an error.
    pub fn transfer_from(&self, other: &MeshDomain, field: &ScalarField) -> Result<ScalarField> {
        let mut out = Vec::with_capacity(self.node_count());
        for i in 0..self.node_count() {
            match other.node_by_key(self.node_key(i)) {
                Some(j) => out.push(field.values[j]),
                None => {
                    return Err(Error::Domain(format!(
                        "node {:?} is not covered by the source mesh",
                        self.node(i)
                    )))
                }
            }
        }
        Ok(ScalarField::new(out))
    }

    /// CSV export: `node_index, x1..xd, value`.
    pub fn write_scalar_csv<W: Write>(&self, field: &ScalarField, out: W) -> Result<()> {
        self.check_scalar(field)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["node_index".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        header.push("value".into());
        w.write_record(&header)?;
        for i in 0..self.node_count() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.node(i).iter().map(|v| v.to_string()));
            rec.push(field.values[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV export: `element_index, b1..bd, g1..gd`.
    pub fn write_vector_csv<W: Write>(&self, field: &VectorField, out: W) -> Result<()> {
        self.check_vector(field)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["element_index".to_string()];
        header.extend((1..=self.dim).map(|i| format!("b{i}")));
        header.extend((1..=self.dim).map(|i| format!("g{i}")));
        w.write_record(&header)?;
        for e in 0..self.element_count() {
            let mut rec = vec![e.to_string()];
            rec.extend(self.barycenter(e).iter().map(|v| v.to_string()));
            rec.extend(field.element(e).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nodes lying on a facet that belongs to exactly one simplex.
fn boundary_nodes(elements: &[u32], d: usize, n_nodes: usize) -> Vec<bool> {
    let n = d + 1;
    let mut facets: HashMap<[u32; MAX_DIM], u32> = HashMap::with_capacity(elements.len());
    for simplex in elements.chunks_exact(n) {
        for skip in 0..n {
            let mut f = [u32::MAX; MAX_DIM];
            let mut k = 0;
            for (a, &v) in simplex.iter().enumerate() {
                if a != skip {
                    f[k] = v;
                    k += 1;
                }
            }
            f[..d].sort_unstable();
            *facets.entry(f).or_insert(0) += 1;
        }
    }
    let mut boundary = vec![false; n_nodes];
    for (f, count) in facets {
        if count == 1 {
            for &v in &f[..d] {
                boundary[v as usize] = true;
            }
        }
    }
    boundary
}
