//! Deep biaffine arc and label scoring.
//!
//! Head and dependent representations are single affine layers with ReLU on
//! top of the pooled word vectors. Position 0 on the head side is ROOT,
//! represented by a learned vector. The arc scorer is a bilinear form with a
//! bias row on the head side; the label scorer has one bilinear form per
//! label with bias entries on both sides.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, IxDyn, Zip};
use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_ARC_DIM: usize = 400;
pub const DEFAULT_LABEL_DIM: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScorerDims {
    pub input: usize,
    pub arc: usize,
    pub label: usize,
    pub labels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiaffineParams {
    pub arc_head_w: Array2<f64>,
    pub arc_head_b: Array1<f64>,
    pub arc_dep_w: Array2<f64>,
    pub arc_dep_b: Array1<f64>,
    pub label_head_w: Array2<f64>,
    pub label_head_b: Array1<f64>,
    pub label_dep_w: Array2<f64>,
    pub label_dep_b: Array1<f64>,
    /// `(arc + 1) x arc`, last row is the head-side bias.
    pub arc_bilinear: Array2<f64>,
    /// `labels x (label + 1) x (label + 1)`.
    pub label_bilinear: Array3<f64>,
    pub root: Array1<f64>,
}

pub const TENSOR_NAMES: [&str; 11] = [
    "arc_head_w",
    "arc_head_b",
    "arc_dep_w",
    "arc_dep_b",
    "label_head_w",
    "label_head_b",
    "label_dep_w",
    "label_dep_b",
    "arc_bilinear",
    "label_bilinear",
    "root",
];

impl BiaffineParams {
    pub fn zeros(dims: ScorerDims) -> Self {
        let ScorerDims {
            input,
            arc,
            label,
            labels,
        } = dims;
        BiaffineParams {
            arc_head_w: Array2::zeros((arc, input)),
            arc_head_b: Array1::zeros(arc),
            arc_dep_w: Array2::zeros((arc, input)),
            arc_dep_b: Array1::zeros(arc),
            label_head_w: Array2::zeros((label, input)),
            label_head_b: Array1::zeros(label),
            label_dep_w: Array2::zeros((label, input)),
            label_dep_b: Array1::zeros(label),
            arc_bilinear: Array2::zeros((arc + 1, arc)),
            label_bilinear: Array3::zeros((labels, label + 1, label + 1)),
            root: Array1::zeros(input),
        }
    }

    /// Projections uniform in `±1/sqrt(input)`, biases and bilinear forms
    /// zero, ROOT vector uniform in `±0.5`.
    pub fn init<R: Rng>(dims: ScorerDims, rng: &mut R) -> Self {
        let mut params = Self::zeros(dims);
        let bound = 1.0 / (dims.input as f64).sqrt();
        for w in [
            &mut params.arc_head_w,
            &mut params.arc_dep_w,
            &mut params.label_head_w,
            &mut params.label_dep_w,
        ] {
            w.mapv_inplace(|_| rng.gen_range(-bound..bound));
        }
        params.root.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        params
    }

    pub fn dims(&self) -> ScorerDims {
        ScorerDims {
            input: self.root.len(),
            arc: self.arc_dep_w.nrows(),
            label: self.label_dep_w.nrows(),
            labels: self.label_bilinear.len_of(Axis(0)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    pub fn tensors(&self) -> [(&'static str, ArrayViewD<'_, f64>); 11] {
        [
            (TENSOR_NAMES[0], self.arc_head_w.view().into_dyn()),
            (TENSOR_NAMES[1], self.arc_head_b.view().into_dyn()),
            (TENSOR_NAMES[2], self.arc_dep_w.view().into_dyn()),
            (TENSOR_NAMES[3], self.arc_dep_b.view().into_dyn()),
            (TENSOR_NAMES[4], self.label_head_w.view().into_dyn()),
            (TENSOR_NAMES[5], self.label_head_b.view().into_dyn()),
            (TENSOR_NAMES[6], self.label_dep_w.view().into_dyn()),
            (TENSOR_NAMES[7], self.label_dep_b.view().into_dyn()),
            (TENSOR_NAMES[8], self.arc_bilinear.view().into_dyn()),
            (TENSOR_NAMES[9], self.label_bilinear.view().into_dyn()),
            (TENSOR_NAMES[10], self.root.view().into_dyn()),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, ArrayViewMutD<'_, f64>); 11] {
        [
            (TENSOR_NAMES[0], self.arc_head_w.view_mut().into_dyn()),
            (TENSOR_NAMES[1], self.arc_head_b.view_mut().into_dyn()),
            (TENSOR_NAMES[2], self.arc_dep_w.view_mut().into_dyn()),
            (TENSOR_NAMES[3], self.arc_dep_b.view_mut().into_dyn()),
            (TENSOR_NAMES[4], self.label_head_w.view_mut().into_dyn()),
            (TENSOR_NAMES[5], self.label_head_b.view_mut().into_dyn()),
            (TENSOR_NAMES[6], self.label_dep_w.view_mut().into_dyn()),
            (TENSOR_NAMES[7], self.label_dep_b.view_mut().into_dyn()),
            (TENSOR_NAMES[8], self.arc_bilinear.view_mut().into_dyn()),
            (TENSOR_NAMES[9], self.label_bilinear.view_mut().into_dyn()),
            (TENSOR_NAMES[10], self.root.view_mut().into_dyn()),
        ]
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn scaled_add(&mut self, scale: f64, other: &BiaffineParams) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, &b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>()).sum()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Arc scores: row `h` is the candidate head (0 = ROOT), column `c - 1` is
/// dependent `c`. Self-arcs hold `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix(pub Array2<f64>);

impl ScoreMatrix {
    /// Wraps a `(n + 1) x n` matrix, forcing the diagonal to `-inf`.
    pub fn new(mut scores: Array2<f64>) -> Result<Self> {
        let n = scores.ncols();
        if n == 0 || scores.nrows() != n + 1 {
            return Err(Error::Dimension(format!("score matrix must be (n+1) x n, got {:?}", scores.dim())));
        }
        for c in 1..=n {
            scores[[c, c - 1]] = f64::NEG_INFINITY;
        }
        Ok(ScoreMatrix(scores))
    }

    pub fn n(&self) -> usize {
        self.0.ncols()
    }

    /// Score of arc `head -> dependent`, dependent 1-based.
    pub fn get(&self, head: usize, dependent: usize) -> f64 {
        self.0[[head, dependent - 1]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

/// Label scores indexed `[head, dependent - 1, label]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelScores(pub Array3<f64>);

impl LabelScores {
    pub fn n(&self) -> usize {
        self.0.len_of(Axis(1))
    }

    pub fn labels(&self) -> usize {
        self.0.len_of(Axis(2))
    }

    pub fn get(&self, head: usize, dependent: usize) -> ndarray::ArrayView1<'_, f64> {
        self.0.slice(s![head, dependent - 1, ..])
    }
}

/// Intermediate values of one scoring pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    words: Array2<f64>,
    heads_in: Array2<f64>,
    arc_head_pre: Array2<f64>,
    arc_head_aug: Array2<f64>,
    arc_dep_pre: Array2<f64>,
    arc_dep: Array2<f64>,
    label_head_pre: Array2<f64>,
    label_head_aug: Array2<f64>,
    label_dep_pre: Array2<f64>,
    label_dep_aug: Array2<f64>,
    pub scores: ScoreMatrix,
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn augment(x: Array2<f64>) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let mut out = Array2::ones((rows, cols + 1));
    out.slice_mut(s![.., ..cols]).assign(&x);
    out
}

fn check_input(word_vectors: ArrayView2<f64>, params: &BiaffineParams) -> Result<()> {
    if word_vectors.nrows() == 0 {
        return Err(Error::Dimension("sentence has no words".into()));
    }
    if word_vectors.ncols() != params.root.len() {
        return Err(Error::Dimension(format!(
            "word vectors have dimension {}, parameters expect {}",
            word_vectors.ncols(),
            params.root.len()
        )));
    }
    Ok(())
}

pub fn forward(word_vectors: ArrayView2<f64>, params: &BiaffineParams) -> Result<Forward> {
    check_input(word_vectors, params)?;
    let n = word_vectors.nrows();
    let words = word_vectors.to_owned();

    let mut heads_in = Array2::zeros((n + 1, words.ncols()));
    heads_in.row_mut(0).assign(&params.root);
    heads_in.slice_mut(s![1.., ..]).assign(&words);

    let arc_head_pre = affine(&heads_in, &params.arc_head_w, &params.arc_head_b);
    let arc_head_aug = augment(relu(&arc_head_pre));
    let arc_dep_pre = affine(&words, &params.arc_dep_w, &params.arc_dep_b);
    let arc_dep = relu(&arc_dep_pre);

    let label_head_pre = affine(&heads_in, &params.label_head_w, &params.label_head_b);
    let label_head_aug = augment(relu(&label_head_pre));
    let label_dep_pre = affine(&words, &params.label_dep_w, &params.label_dep_b);
    let label_dep_aug = augment(relu(&label_dep_pre));

    let raw = arc_head_aug.dot(&params.arc_bilinear).dot(&arc_dep.t());
    let scores = ScoreMatrix::new(raw)?;

    Ok(Forward {
        words,
        heads_in,
        arc_head_pre,
        arc_head_aug,
        arc_dep_pre,
        arc_dep,
        label_head_pre,
        label_head_aug,
        label_dep_pre,
        label_dep_aug,
        scores,
    })
}

impl Forward {
    pub fn n(&self) -> usize {
        self.words.nrows()
    }

    /// Scores of every label for the arc `head -> dependent`.
    pub fn label_scores_for(&self, params: &BiaffineParams, head: usize, dependent: usize) -> Array1<f64> {
        let a = self.label_head_aug.row(head);
        let b = self.label_dep_aug.row(dependent - 1);
        params
            .label_bilinear
            .outer_iter()
            .map(|form| a.dot(&form.dot(&b)))
            .collect()
    }

    /// The full `(n + 1) x n x labels` table; self-arcs hold `-inf`.
    pub fn label_scores(&self, params: &BiaffineParams) -> LabelScores {
        let n = self.n();
        let labels = params.label_bilinear.len_of(Axis(0));
        let mut out = Array3::zeros((n + 1, n, labels));
        for (r, form) in params.label_bilinear.outer_iter().enumerate() {
            let table = self.label_head_aug.dot(&form).dot(&self.label_dep_aug.t());
            out.slice_mut(s![.., .., r]).assign(&table);
        }
        for c in 1..=n {
            out.slice_mut(s![c, c - 1, ..]).fill(f64::NEG_INFINITY);
        }
        LabelScores(out)
    }

    /// Parameter gradients given the gradient of a loss with respect to the
    /// arc scores and, for selected arcs `(head, dependent)`, with respect
    /// to their label scores.
    pub fn backward(
        &self,
        params: &BiaffineParams,
        d_scores: ArrayView2<f64>,
        d_labels: &[(usize, usize, Array1<f64>)],
    ) -> BiaffineParams {
        let n = self.n();
        let arc = params.arc_dep_w.nrows();
        let label = params.label_dep_w.nrows();
        let mut grads = params.zeros_like();

        // Self-arc cells carry no gradient.
        let mut d_scores = d_scores.to_owned();
        for c in 1..=n {
            d_scores[[c, c - 1]] = 0.0;
        }

        // arc scores = H_aug U D^T
        let u_dt = params.arc_bilinear.dot(&self.arc_dep.t());
        grads.arc_bilinear = self.arc_head_aug.t().dot(&d_scores).dot(&self.arc_dep);
        let d_head_aug = d_scores.dot(&u_dt.t());
        let d_dep = d_scores.t().dot(&self.arc_head_aug.dot(&params.arc_bilinear));

        let mut d_head = d_head_aug.slice(s![.., ..arc]).to_owned();
        relu_backward(&mut d_head, &self.arc_head_pre);
        let mut d_dep = d_dep;
        relu_backward(&mut d_dep, &self.arc_dep_pre);

        grads.arc_head_w = d_head.t().dot(&self.heads_in);
        grads.arc_head_b = d_head.sum_axis(Axis(0));
        grads.arc_dep_w = d_dep.t().dot(&self.words);
        grads.arc_dep_b = d_dep.sum_axis(Axis(0));
        let mut d_root = d_head.row(0).dot(&params.arc_head_w);

        if !d_labels.is_empty() {
            let mut d_label_head_aug = Array2::<f64>::zeros((n + 1, label + 1));
            let mut d_label_dep_aug = Array2::<f64>::zeros((n, label + 1));
            for (head, dependent, g) in d_labels {
                let a = self.label_head_aug.row(*head);
                let b = self.label_dep_aug.row(dependent - 1);
                let mut combined = Array2::<f64>::zeros((label + 1, label + 1));
                for (r, &gr) in g.iter().enumerate() {
                    if gr == 0.0 {
                        continue;
                    }
                    let form = params.label_bilinear.index_axis(Axis(0), r);
                    combined.scaled_add(gr, &form);
                    let mut d_form = grads.label_bilinear.index_axis_mut(Axis(0), r);
                    Zip::from(&mut d_form)
                        .and(&a.insert_axis(Axis(1)).broadcast((label + 1, label + 1)).unwrap())
                        .and(&b.insert_axis(Axis(0)).broadcast((label + 1, label + 1)).unwrap())
                        .for_each(|d, &ai, &bj| *d += gr * ai * bj);
                }
                let mut row = d_label_head_aug.row_mut(*head);
                row += &combined.dot(&b);
                let mut row = d_label_dep_aug.row_mut(dependent - 1);
                row += &combined.t().dot(&a);
            }
            let mut d_lhead = d_label_head_aug.slice(s![.., ..label]).to_owned();
            relu_backward(&mut d_lhead, &self.label_head_pre);
            let mut d_ldep = d_label_dep_aug.slice(s![.., ..label]).to_owned();
            relu_backward(&mut d_ldep, &self.label_dep_pre);

            grads.label_head_w = d_lhead.t().dot(&self.heads_in);
            grads.label_head_b = d_lhead.sum_axis(Axis(0));
            grads.label_dep_w = d_ldep.t().dot(&self.words);
            grads.label_dep_b = d_ldep.sum_axis(Axis(0));
            d_root += &d_lhead.row(0).dot(&params.label_head_w);
        }

        grads.root = d_root;
        grads
    }
}

fn relu_backward(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
}

pub fn arc_scores(word_vectors: ArrayView2<f64>, params: &BiaffineParams) -> Result<ScoreMatrix> {
    Ok(forward(word_vectors, params)?.scores)
}

pub fn label_scores(word_vectors: ArrayView2<f64>, params: &BiaffineParams) -> Result<LabelScores> {
    Ok(forward(word_vectors, params)?.label_scores(params))
}

const CHECKPOINT_MAGIC: &str = "GRAPHDEP-CHECKPOINT v1";

/// Trained scorer parameters together with the label inventory.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: BiaffineParams,
    pub labels: Vec<String>,
}

impl Checkpoint {
    /// Text serialization. Floats are written in shortest round-trip form,
    /// so reading back is exact.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", CHECKPOINT_MAGIC).unwrap();
        writeln!(out, "labels\t{}\t{}", self.labels.len(), self.labels.join("\t")).unwrap();
        for (name, tensor) in self.params.tensors() {
            let shape: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
            writeln!(out, "tensor {} {}", name, shape.join(" ")).unwrap();
            let values: Vec<String> = tensor.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", values.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |m: String| Error::Checkpoint(m);
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(err("missing or unsupported header".into()));
        }
        let label_line = lines.next().ok_or_else(|| err("missing label line".into()))?;
        let mut fields = label_line.split('\t');
        if fields.next() != Some("labels") {
            return Err(err("missing label line".into()));
        }
        let count: usize = fields
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| err("bad label count".into()))?;
        let labels: Vec<String> = fields.filter(|l| !l.is_empty()).map(str::to_string).collect();
        if labels.len() != count {
            return Err(err(format!("expected {} labels, found {}", count, labels.len())));
        }

        let mut tensors = Vec::new();
        while let Some(header) = lines.next() {
            if header.is_empty() {
                continue;
            }
            let parts: Vec<&str> = header.split_whitespace().collect();
            if parts.len() < 2 || parts[0] != "tensor" {
                return Err(err(format!("expected tensor header, got '{}'", header)));
            }
            let shape = parts[2..]
                .iter()
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| err(format!("bad shape in '{}'", header)))?;
            let values = lines
                .next()
                .unwrap_or("")
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(format!("tensor {}: {}", parts[1], e)))?;
            let array = ArrayD::from_shape_vec(IxDyn(&shape), values)
                .map_err(|e| err(format!("tensor {}: {}", parts[1], e)))?;
            tensors.push((parts[1].to_string(), array));
        }

        let find = |name: &str| -> Result<&ArrayD<f64>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| err(format!("missing tensor {}", name)))
        };
        let root = find("root")?;
        let arc = find("arc_dep_w")?.shape()[0];
        let label = find("label_dep_w")?.shape()[0];
        let dims = ScorerDims {
            input: root.len(),
            arc,
            label,
            labels: labels.len(),
        };
        let mut params = BiaffineParams::zeros(dims);
        for (name, mut target) in params.tensors_mut() {
            let source = find(name)?;
            if source.shape() != target.shape() {
                return Err(err(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    name,
                    source.shape(),
                    target.shape()
                )));
            }
            target.assign(source);
        }
        Ok(Checkpoint { params, labels })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
