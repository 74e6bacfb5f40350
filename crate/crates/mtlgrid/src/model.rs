//! The shared-trunk multi-head network (hard parameter sharing). One trunk
//! evaluation feeds every active head; which heads exist is decided by the
//! training objective.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::GridTaskSpec;
use crate::error::{Error, Result};
use crate::layers::{conv2d_init, linear_init, Context, Layer};
use crate::tensor::{argmax_rows, Tensor};

pub const EMBEDDING_DIM: usize = 128;
const FLAT_DIM: usize = 32 * 7 * 7; // two stride-2 pools: 28 -> 14 -> 7

const CHECKPOINT_MAGIC: &[u8; 4] = b"MTLG";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Base,
    Wloss,
    New,
    Single,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Base => "base",
            Objective::Wloss => "wloss",
            Objective::New => "new",
            Objective::Single => "single",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Objective::Base => 0,
            Objective::Wloss => 1,
            Objective::New => 2,
            Objective::Single => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Objective::Base),
            1 => Some(Objective::Wloss),
            2 => Some(Objective::New),
            3 => Some(Objective::Single),
            _ => None,
        }
    }

    fn heads(self, spec: &GridTaskSpec) -> Vec<(HeadKind, usize)> {
        match self {
            Objective::Base | Objective::Single => vec![(HeadKind::Main, spec.classes())],
            Objective::Wloss => vec![
                (HeadKind::Main, spec.classes()),
                (HeadKind::Digit, spec.cols),
                (HeadKind::Script, spec.rows),
            ],
            Objective::New => vec![
                (HeadKind::Main, spec.classes()),
                (HeadKind::Aux, crate::tasks::AUX_CLASSES),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Main,
    Digit,
    Script,
    Aux,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Main => "main",
            HeadKind::Digit => "digit",
            HeadKind::Script => "script",
            HeadKind::Aux => "aux",
        }
    }
}

#[derive(Debug)]
pub struct MtlModel {
    pub spec: GridTaskSpec,
    pub objective: Objective,
    trunk: Vec<Layer>,
    heads: Vec<(HeadKind, Layer)>,
    trunk_passes: AtomicU64,
}

impl Clone for MtlModel {
    fn clone(&self) -> Self {
        MtlModel {
            spec: self.spec.clone(),
            objective: self.objective,
            trunk: self.trunk.clone(),
            heads: self.heads.clone(),
            trunk_passes: AtomicU64::new(self.trunk_passes.load(Ordering::Relaxed)),
        }
    }
}

/// Everything a forward pass caches so backward can run without re-deriving
/// activations: trunk contexts, the shared embedding, and per-head logits.
pub struct ForwardTrace {
    trunk_ctxs: Vec<Context>,
    pre_flatten_shape: Vec<usize>,
    pub embedding: Tensor,
    head_logits: Vec<(HeadKind, Tensor, Context)>,
}

impl ForwardTrace {
    pub fn logits(&self, kind: HeadKind) -> Option<&Tensor> {
        self.head_logits
            .iter()
            .find(|(k, _, _)| *k == kind)
            .map(|(_, t, _)| t)
    }
}

pub fn build_model(spec: &GridTaskSpec, objective: Objective, seed: u64) -> MtlModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trunk = vec![
        conv2d_init(1, 16, &mut rng),
        Layer::Relu,
        Layer::MaxPool2,
        conv2d_init(16, 32, &mut rng),
        Layer::Relu,
        Layer::MaxPool2,
        linear_init(FLAT_DIM, EMBEDDING_DIM, &mut rng),
        Layer::Relu,
    ];
    let heads = objective
        .heads(spec)
        .into_iter()
        .map(|(kind, width)| (kind, linear_init(EMBEDDING_DIM, width, &mut rng)))
        .collect();
    MtlModel {
        spec: spec.clone(),
        objective,
        trunk,
        heads,
        trunk_passes: AtomicU64::new(0),
    }
}

impl MtlModel {
    pub fn head_kinds(&self) -> Vec<HeadKind> {
        self.heads.iter().map(|(k, _)| *k).collect()
    }

    pub fn has_head(&self, kind: HeadKind) -> bool {
        self.heads.iter().any(|(k, _)| *k == kind)
    }

    pub fn head_width(&self, kind: HeadKind) -> Option<usize> {
        self.heads.iter().find(|(k, _)| *k == kind).map(|(_, l)| match l {
            Layer::Linear { weight, .. } => weight.shape()[0],
            _ => unreachable!("heads are linear"),
        })
    }

    /// Parameters in fixed architectural order: trunk first, then heads.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.trunk {
            out.extend(layer.parameters());
        }
        for (_, layer) in &self.heads {
            out.extend(layer.parameters());
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.trunk {
            out.extend(layer.parameters_mut());
        }
        for (_, layer) in &mut self.heads {
            out.extend(layer.parameters_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Number of trunk evaluations performed so far (instrumentation).
    pub fn trunk_passes(&self) -> u64 {
        self.trunk_passes.load(Ordering::Relaxed)
    }

    pub fn forward(&self, images: &Tensor) -> Result<ForwardTrace> {
        if images.rank() != 4 || images.shape()[1] != 1 || images.shape()[2] != 28
            || images.shape()[3] != 28
        {
            return Err(Error::ShapeMismatch {
                op: "model forward",
                expected: "[B, 1, 28, 28]".to_string(),
                actual: format!("{:?}", images.shape()),
            });
        }
        self.trunk_passes.fetch_add(1, Ordering::Relaxed);
        let batch = images.shape()[0];
        let mut current = images.clone();
        let mut trunk_ctxs = Vec::with_capacity(self.trunk.len());
        let mut pre_flatten_shape = Vec::new();
        for layer in &self.trunk {
            if matches!(layer, Layer::Linear { .. }) && current.rank() == 4 {
                pre_flatten_shape = current.shape().to_vec();
                current = current.reshape(&[batch, FLAT_DIM])?;
            }
            let (out, ctx) = layer.forward(&current)?;
            trunk_ctxs.push(ctx);
            current = out;
        }
        let embedding = current;
        let mut head_logits = Vec::with_capacity(self.heads.len());
        for (kind, layer) in &self.heads {
            let (logits, ctx) = layer.forward(&embedding)?;
            head_logits.push((*kind, logits, ctx));
        }
        Ok(ForwardTrace {
            trunk_ctxs,
            pre_flatten_shape,
            embedding,
            head_logits,
        })
    }

    /// Reverse traversal from per-head logit gradients down to parameter
    /// gradients, aligned with `parameters()` order. Heads without a
    /// supplied gradient contribute zero.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        logit_grads: &[(HeadKind, &Tensor)],
    ) -> Result<Vec<Tensor>> {
        let mut head_param_grads: Vec<Tensor> = Vec::new();
        let mut embedding_grad = Tensor::zeros(trace.embedding.shape());
        for (kind, layer) in &self.heads {
            let supplied = logit_grads.iter().find(|(k, _)| k == kind).map(|(_, g)| *g);
            let (_, logits, ctx) = trace
                .head_logits
                .iter()
                .find(|(k, _, _)| k == kind)
                .expect("trace produced by this model");
            match supplied {
                Some(g) => {
                    g.check_shape("head backward", logits.shape())?;
                    let grad = layer.backward(ctx, g)?;
                    for (a, b) in embedding_grad.data_mut().iter_mut().zip(grad.input.data()) {
                        *a += b;
                    }
                    head_param_grads.push(grad.weight.unwrap());
                    head_param_grads.push(grad.bias.unwrap());
                }
                None => {
                    for p in layer.parameters() {
                        head_param_grads.push(Tensor::zeros(p.shape()));
                    }
                }
            }
        }
        let mut trunk_param_grads: Vec<Tensor> = Vec::new();
        let mut current = embedding_grad;
        for (layer, ctx) in self.trunk.iter().zip(&trace.trunk_ctxs).rev() {
            let grad = layer.backward(ctx, &current)?;
            if let Some(b) = grad.bias {
                trunk_param_grads.push(b);
            }
            if let Some(w) = grad.weight {
                trunk_param_grads.push(w);
            }
            current = grad.input;
            if matches!(layer, Layer::Linear { .. }) && !trace.pre_flatten_shape.is_empty() {
                current = current.reshape(&trace.pre_flatten_shape)?;
            }
        }
        trunk_param_grads.reverse();
        trunk_param_grads.extend(head_param_grads);
        Ok(trunk_param_grads)
    }

    /// Argmax predictions per head, lowest index on ties. Returns main
    /// labels plus aux predictions when the aux head exists.
    pub fn predict(&self, images: &Tensor) -> Result<(Vec<usize>, Option<Vec<usize>>)> {
        let trace = self.forward(images)?;
        let main = argmax_rows(trace.logits(HeadKind::Main).expect("main head always present"));
        let aux = trace.logits(HeadKind::Aux).map(argmax_rows);
        Ok((main, aux))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.spec.rows as u32).unwrap();
        out.write_u32::<LittleEndian>(self.spec.cols as u32).unwrap();
        out.push(self.objective.tag());
        for param in self.parameters() {
            out.write_u32::<LittleEndian>(param.rank() as u32).unwrap();
            for &e in param.shape() {
                out.write_u32::<LittleEndian>(e as u32).unwrap();
            }
            for &v in param.data() {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<MtlModel> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |detail: &str| Error::CheckpointCorrupt {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };
        if bytes.len() < 17 {
            return Err(corrupt("truncated header"));
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointBadMagic {
                path: path.to_path_buf(),
            });
        }
        let version = LittleEndian::read_u32(&bytes[4..8]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointBadVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let rows = LittleEndian::read_u32(&bytes[8..12]) as usize;
        let cols = LittleEndian::read_u32(&bytes[12..16]) as usize;
        let objective = Objective::from_tag(bytes[16])
            .ok_or_else(|| corrupt(&format!("unknown objective tag {}", bytes[16])))?;
        let spec = if rows == 3 && cols == 10 {
            GridTaskSpec::multiscript()
        } else if rows == 11 && cols == 7 {
            GridTaskSpec::amharic()
        } else {
            GridTaskSpec::new(rows, cols, (0..rows).map(|r| format!("Row{}", r)).collect())
        };
        let mut model = build_model(&spec, objective, 0);
        let mut pos = 17;
        for param in model.parameters_mut() {
            if pos + 4 > bytes.len() {
                return Err(corrupt("truncated at tensor rank"));
            }
            let rank = LittleEndian::read_u32(&bytes[pos..pos + 4]) as usize;
            pos += 4;
            if pos + 4 * rank > bytes.len() {
                return Err(corrupt("truncated at tensor extents"));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(LittleEndian::read_u32(&bytes[pos..pos + 4]) as usize);
                pos += 4;
            }
            if shape != param.shape() {
                return Err(corrupt(&format!(
                    "tensor shape {:?} does not match architecture {:?}",
                    shape,
                    param.shape()
                )));
            }
            let n = param.len();
            if pos + 8 * n > bytes.len() {
                return Err(corrupt("truncated at tensor values"));
            }
            for v in param.data_mut() {
                *v = LittleEndian::read_f64(&bytes[pos..pos + 8]);
                pos += 8;
            }
        }
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes after last tensor"));
        }
        Ok(model)
    }
}
