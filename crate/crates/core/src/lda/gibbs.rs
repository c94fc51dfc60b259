use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Collapsed Gibbs state for LDA. Documents are word-id sequences over
/// `0..num_words`.
#[derive(Debug, Clone)]
pub struct GibbsChain {
    k: usize,
    num_words: usize,
    alpha: f64,
    eta: f64,
    docs: Vec<Vec<usize>>,
    z: Vec<Vec<usize>>,
    n_dk: Vec<u32>,
    n_kw: Vec<u32>,
    n_k: Vec<u32>,
    rng: ChaCha8Rng,
    weights: Vec<f64>,
}

impl GibbsChain {
    /// Random initial assignments drawn uniformly from the topics.
    pub fn new(
        docs: Vec<Vec<usize>>,
        num_words: usize,
        k: usize,
        alpha: f64,
        eta: f64,
        seed: u64,
    ) -> Result<Self> {
        if docs.is_empty() || docs.iter().all(Vec::is_empty) {
            return Err(Error::EmptyCorpus);
        }
        if k == 0 || !(alpha > 0.0) || !(eta > 0.0) {
            return Err(Error::invalid("LDA needs K >= 1 and positive alpha, eta"));
        }
        if let Some(&w) = docs.iter().flatten().find(|&&w| w >= num_words) {
            return Err(Error::invalid(format!("word id {w} >= vocabulary size {num_words}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n_dk = vec![0; docs.len() * k];
        let mut n_kw = vec![0; k * num_words];
        let mut n_k = vec![0; k];
        let z = docs
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                doc.iter()
                    .map(|&w| {
                        let t = rng.random_range(0..k);
                        n_dk[d * k + t] += 1;
                        n_kw[t * num_words + w] += 1;
                        n_k[t] += 1;
                        t
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            k,
            num_words,
            alpha,
            eta,
            docs,
            z,
            n_dk,
            n_kw,
            n_k,
            rng,
            weights: vec![0.0; k],
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_words(&self) -> usize {
        self.num_words
    }

    pub fn docs(&self) -> &[Vec<usize>] {
        &self.docs
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.z
    }

    /// Resamples every token once, in document order.
    pub fn sweep(&mut self) {
        let (k, nw) = (self.k, self.num_words);
        let w_eta = nw as f64 * self.eta;
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i];
                let old = self.z[d][i];
                self.n_dk[d * k + old] -= 1;
                self.n_kw[old * nw + w] -= 1;
                self.n_k[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (self.n_dk[d * k + t] as f64 + self.alpha)
                        * (self.n_kw[t * nw + w] as f64 + self.eta)
                        / (self.n_k[t] as f64 + w_eta);
                    total += p;
                    self.weights[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.z[d][i] = new;
                self.n_dk[d * k + new] += 1;
                self.n_kw[new * nw + w] += 1;
                self.n_k[new] += 1;
            }
        }
    }

    /// `(n_kw + η) / (n_k + Wη)`, row-major `K × W`.
    pub fn phi_sample(&self) -> Vec<f64> {
        let nw = self.num_words;
        let mut phi = vec![0.0; self.k * nw];
        for t in 0..self.k {
            let denom = self.n_k[t] as f64 + nw as f64 * self.eta;
            for w in 0..nw {
                phi[t * nw + w] = (self.n_kw[t * nw + w] as f64 + self.eta) / denom;
            }
        }
        phi
    }

    /// `(n_dk + α) / (n_d + Kα)` per document.
    pub fn theta_sample(&self) -> Vec<Vec<f64>> {
        let k = self.k;
        self.docs
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                let denom = doc.len() as f64 + k as f64 * self.alpha;
                (0..k)
                    .map(|t| (self.n_dk[d * k + t] as f64 + self.alpha) / denom)
                    .collect()
            })
            .collect()
    }

    /// `log P(w | z)` with φ integrated out.
    pub fn log_likelihood(&self) -> f64 {
        log_p_words_given_z(&self.n_kw, &self.n_k, self.k, self.num_words, self.eta)
    }

    pub fn topic_word_counts(&self) -> &[u32] {
        &self.n_kw
    }

    pub fn topic_counts(&self) -> &[u32] {
        &self.n_k
    }

    /// Σ_k n_dk = |d| for every document and Σ_w n_kw = n_k for every topic.
    pub fn counts_consistent(&self) -> bool {
        let (k, nw) = (self.k, self.num_words);
        let docs_ok = self
            .docs
            .iter()
            .enumerate()
            .all(|(d, doc)| self.n_dk[d * k..(d + 1) * k].iter().sum::<u32>() as usize == doc.len());
        let topics_ok =
            (0..k).all(|t| self.n_kw[t * nw..(t + 1) * nw].iter().sum::<u32>() == self.n_k[t]);
        let z_ok = self.z.iter().enumerate().all(|(d, zs)| {
            (0..k).all(|t| zs.iter().filter(|&&x| x == t).count() as u32 == self.n_dk[d * k + t])
        });
        docs_ok && topics_ok && z_ok
    }
}

/// `log P(w | z) = K(lnΓ(Wη) − W lnΓ(η)) + Σ_k [Σ_w lnΓ(n_kw + η) − lnΓ(n_k + Wη)]`
pub fn log_p_words_given_z(n_kw: &[u32], n_k: &[u32], k: usize, num_words: usize, eta: f64) -> f64 {
    let w_eta = num_words as f64 * eta;
    let lg_eta = ln_gamma(eta);
    let mut ll = k as f64 * ln_gamma(w_eta);
    for t in 0..k {
        for &c in &n_kw[t * num_words..(t + 1) * num_words] {
            // lnΓ(c + η) − lnΓ(η) vanishes for zero counts
            if c > 0 {
                ll += ln_gamma(c as f64 + eta) - lg_eta;
            }
        }
        ll -= ln_gamma(n_k[t] as f64 + w_eta);
    }
    ll
}

/// `log P(z)` with θ integrated out (symmetric Dirichlet α per document).
pub fn log_p_z(n_dk: &[u32], doc_lens: &[usize], k: usize, alpha: f64) -> f64 {
    let k_alpha = k as f64 * alpha;
    let lg_alpha = ln_gamma(alpha);
    let mut lp = 0.0;
    for (d, &len) in doc_lens.iter().enumerate() {
        lp += ln_gamma(k_alpha) - ln_gamma(len as f64 + k_alpha);
        for &c in &n_dk[d * k..(d + 1) * k] {
            if c > 0 {
                lp += ln_gamma(c as f64 + alpha) - lg_alpha;
            }
        }
    }
    lp
}
