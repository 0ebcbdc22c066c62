//! Adversarial training of the public/private embedding split and the
//! empirical-privacy evaluation built on it.
//!
//! The discriminator `D` sees one public embedding at a time and guesses
//! which client produced it. Its loss is the mean over clients of the
//! cross-entropy against the true client; the generator (encoders and heads)
//! minimises its task loss minus `alpha` times that loss, with `D` frozen.
//! Training alternates `d_steps` discriminator updates and one generator
//! update per batch.
//!
//! Evaluation reports the in-training discriminator on held-out records
//! and, more importantly, a freshly trained adversary on frozen embeddings;
//! the latter is the honest test since the in-training `D` may simply be weak.

mod adversarial;
mod report;
mod train;

use std::rc::Rc;

use thiserror::Error;

use crate::data::DataError;
use crate::nn::{Bind, EncoderInput, Graph, Mlp, ModelBundle, NnError, ParamGrads, ParamStore, Task, Var};
use crate::vfl::{compact_batch_input, PartitionedSequence, VflError};

pub use adversarial::{adversarial_train, client_public_embeddings, evaluate_privacy, fresh_discriminator, AdversarialConfig, FreshAdversary};
pub use report::{Confusion, EpochRecord, PrivacyReport, TaskMetrics};
pub use train::{predict, train_central, train_supervised, SupervisedConfig, TrainRecord, TrainReport};

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("training diverged at epoch {epoch}, batch {batch}: {what} is {value}")]
    Diverged { epoch: usize, batch: usize, what: &'static str, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Vfl(#[from] VflError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, PrivacyError>;

/// Per-client compact encoder inputs and targets of one batch.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub inputs: Vec<EncoderInput>,
    pub targets: Rc<Vec<f64>>,
}

impl TrainBatch {
    pub fn new(bundle: &ModelBundle, parts: &[PartitionedSequence]) -> Result<Self> {
        let d_in = bundle.spec.encoder.d_in;
        let inputs = (0..bundle.spec.n_clients).map(|c| compact_batch_input(parts, c, d_in)).collect::<std::result::Result<_, _>>()?;
        Ok(Self { inputs, targets: Rc::new(parts.iter().map(|p| p.label).collect()) })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Public embeddings (one `batch x h_pub` var per client) and the model
/// output `batch x 1`.
pub(crate) fn bundle_forward<'a>(
    bundle: &'a ModelBundle,
    store: &'a ParamStore,
    g: &mut Graph<'a>,
    bind: Bind,
    inputs: &'a [EncoderInput],
) -> Result<(Vec<Var>, Var)> {
    let hp = bundle.spec.h_pub;
    let w = bundle.spec.embedding_width();
    let mut pubs = Vec::with_capacity(inputs.len());
    let mut privs = Vec::with_capacity(inputs.len());
    for (enc, inp) in bundle.encoders.iter().zip(inputs) {
        let e = enc.forward(g, store, bind, inp)?;
        if hp > 0 {
            pubs.push(g.slice_cols(e, 0, hp));
        }
        privs.push(g.slice_cols(e, hp, w));
    }
    let e_priv = g.concat_cols(&privs);
    let y_priv = bundle.private_head.forward(g, store, bind, e_priv);
    let out = match (&bundle.public_head, &bundle.fusion_head) {
        (Some(ph), Some(fh)) => {
            let e_pub = g.concat_cols(&pubs);
            let y_pub = ph.forward(g, store, bind, e_pub);
            let z = g.concat_cols(&[y_pub, y_priv]);
            fh.forward(g, store, bind, z)
        }
        _ => y_priv,
    };
    Ok((pubs, out))
}

/// Binary cross-entropy on logits or mean squared error.
pub fn task_loss(g: &mut Graph, out: Var, targets: Rc<Vec<f64>>, task: Task) -> Var {
    match task {
        Task::Classification => g.bce_logits(out, targets),
        Task::Regression => g.mse(out, targets),
    }
}

/// `(1/n) sum_i CE(D(e_pub_i), i)`, each cross-entropy averaged over the batch.
pub fn loss_discriminator<'a>(g: &mut Graph<'a>, disc: &Mlp, store: &'a ParamStore, bind: Bind, e_pubs: &[Var]) -> Result<Var> {
    let n = e_pubs.len();
    if n == 0 {
        return Err(PrivacyError::Config("discriminator needs at least one client".into()));
    }
    let mut total = None;
    for (i, &e) in e_pubs.iter().enumerate() {
        let rows = g.value(e).rows;
        let z = disc.forward(g, store, bind, e);
        let ce = g.cross_entropy(z, Rc::new(vec![i; rows]))?;
        total = Some(match total {
            None => ce,
            Some(t) => g.add(t, ce),
        });
    }
    Ok(g.scale(total.expect("n > 0"), 1.0 / n as f64))
}

/// `L_task - alpha * L_D`.
pub fn loss_generator(g: &mut Graph, task: Var, l_d: Var, alpha: f64) -> Var {
    let p = g.scale(l_d, alpha);
    g.sub(task, p)
}

/// Scalar parts of one generator objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorLoss {
    pub total: f64,
    pub task: f64,
    pub disc: f64,
}

fn discriminator(bundle: &ModelBundle) -> Result<&Mlp> {
    bundle.discriminator.as_ref().ok_or_else(|| PrivacyError::Config(format!("{} has no discriminator", bundle.spec.variant)))
}

/// Discriminator loss on `batch` with gradients for the discriminator only;
/// encoders enter as constants.
pub fn discriminator_objective(bundle: &ModelBundle, store: &ParamStore, batch: &TrainBatch) -> Result<(f64, ParamGrads)> {
    let disc = discriminator(bundle)?;
    let only = |id: usize| bundle.is_disc_param(id);
    let mut g = Graph::new();
    let (pubs, _) = bundle_forward(bundle, store, &mut g, Bind::Only(&only), &batch.inputs)?;
    let l = loss_discriminator(&mut g, disc, store, Bind::Only(&only), &pubs)?;
    Ok((g.scalar(l), g.backward(l)))
}

/// Generator loss on `batch` with gradients for everything but the
/// discriminator, which enters as constants.
pub fn generator_objective(bundle: &ModelBundle, store: &ParamStore, batch: &TrainBatch, alpha: f64) -> Result<(GeneratorLoss, ParamGrads)> {
    let disc = discriminator(bundle)?;
    let only = |id: usize| !bundle.is_disc_param(id);
    let mut g = Graph::new();
    let (pubs, out) = bundle_forward(bundle, store, &mut g, Bind::Only(&only), &batch.inputs)?;
    let task = task_loss(&mut g, out, batch.targets.clone(), bundle.spec.task);
    let l_d = loss_discriminator(&mut g, disc, store, Bind::Only(&only), &pubs)?;
    let total = loss_generator(&mut g, task, l_d, alpha);
    let loss = GeneratorLoss { total: g.scalar(total), task: g.scalar(task), disc: g.scalar(l_d) };
    Ok((loss, g.backward(total)))
}
