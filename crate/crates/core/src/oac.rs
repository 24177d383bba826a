//! Over-the-air majority-vote schemes.
//!
//! * FSK-MV: every gradient index owns two resources. An ED puts a randomised
//!   unit-circle symbol of energy `E_s` on the first resource to vote `+1` or
//!   on the second to vote `-1`. The ES compares the received energies.
//! * OBDA: pairs of votes form a QPSK symbol on one subcarrier, optionally
//!   pre-equalised with truncated channel inversion (TCI). The ES reads the
//!   signs of the real and imaginary parts.
//! * The ideal vote is the error-free coordinate-wise sign of the vote sum.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::waveform::ResourceGrid;

/// Symbol energy of an FSK-MV vote.
pub const FSK_SYMBOL_ENERGY: f64 = 2.0;

/// Sign with a fair coin for zero, as used throughout signSGD.
pub fn random_sign<R: Rng + ?Sized>(x: f64, rng: &mut R) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

/// A vector of `±1` votes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignVector(Vec<i8>);

impl SignVector {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::OutOfRange(format!("vote {bad} is not ±1")));
        }
        Ok(Self(values))
    }

    pub fn filled(len: usize, v: i8) -> Self {
        assert!(v == 1 || v == -1);
        Self(vec![v; len])
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self(
            (0..len)
                .map(|_| if rng.random::<bool>() { 1 } else { -1 })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = i8> + '_ {
        self.0.iter().copied()
    }

    pub fn into_inner(self) -> Vec<i8> {
        self.0
    }

    /// Number of coordinates where `self` and `other` differ.
    pub fn hamming(&self, other: &SignVector) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// Resource coordinate `(OFDM symbol, subcarrier)`.
pub type Resource = (usize, usize);

/// Mapping of each gradient index to its `(+, -)` resource pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceMap {
    pairs: Vec<(Resource, Resource)>,
    symbols: usize,
    subcarriers: usize,
}

impl ResourceMap {
    pub fn new(
        pairs: Vec<(Resource, Resource)>,
        symbols: usize,
        subcarriers: usize,
    ) -> Result<Self> {
        let available = symbols * subcarriers;
        if 2 * pairs.len() > available {
            return Err(Error::Capacity {
                needed: 2 * pairs.len(),
                available,
            });
        }
        let mut used = vec![false; available];
        for &(p, m) in &pairs {
            for (t, f) in [p, m] {
                if t >= symbols || f >= subcarriers {
                    return Err(Error::OutOfRange(format!(
                        "resource ({t}, {f}) outside {symbols}x{subcarriers}"
                    )));
                }
                let slot = &mut used[t * subcarriers + f];
                if *slot {
                    return Err(Error::OutOfRange(format!(
                        "resource ({t}, {f}) assigned twice"
                    )));
                }
                *slot = true;
            }
        }
        Ok(Self {
            pairs,
            symbols,
            subcarriers,
        })
    }

    /// Number of mapped gradient indices `q`.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair(&self, i: usize) -> (Resource, Resource) {
        self.pairs[i]
    }

    pub fn pairs(&self) -> &[(Resource, Resource)] {
        &self.pairs
    }

    pub fn num_symbols(&self) -> usize {
        self.symbols
    }

    pub fn num_subcarriers(&self) -> usize {
        self.subcarriers
    }
}

/// OFDM symbols FSK-MV needs for `q` votes on `m` subcarriers.
pub fn fsk_symbols_needed(q: usize, m: usize) -> usize {
    (2 * q).div_ceil(m)
}

/// OFDM symbols OBDA needs for `q` votes on `m` subcarriers.
pub fn obda_symbols_needed(q: usize, m: usize) -> usize {
    q.div_ceil(2 * m)
}

/// Adjacent-subcarrier FSK map: vote `i` uses subcarriers `2j` and `2j + 1`
/// of OFDM symbol `t`, where `i = t · M/2 + j`.
pub fn build_fsk_map(q: usize, symbols: usize, m: usize) -> Result<ResourceMap> {
    if !m.is_multiple_of(2) {
        return Err(Error::OutOfRange(format!(
            "FSK-MV needs an even number of subcarriers, got {m}"
        )));
    }
    if 2 * q > symbols * m {
        return Err(Error::Capacity {
            needed: 2 * q,
            available: symbols * m,
        });
    }
    let half = m / 2;
    let pairs = (0..q)
        .map(|i| {
            let t = i / half;
            let f = 2 * (i % half);
            ((t, f), (t, f + 1))
        })
        .collect();
    ResourceMap::new(pairs, symbols, m)
}

/// Choice of the unit-circle symbol `r_{k,i}` carried by an active resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Randomization {
    /// Uniform over the four QPSK points.
    #[default]
    Qpsk,
    /// Always `1`.
    None,
}

fn qpsk_point<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re = if rng.random::<bool>() { s } else { -s };
    let im = if rng.random::<bool>() { s } else { -s };
    Complex64::new(re, im)
}

/// FSK-MV transmit grid of one ED with QPSK randomisation.
pub fn fskmv_encode<R: Rng + ?Sized>(
    votes: &SignVector,
    map: &ResourceMap,
    rng: &mut R,
) -> Result<ResourceGrid> {
    fskmv_encode_with(votes, map, Randomization::Qpsk, rng)
}

pub fn fskmv_encode_with<R: Rng + ?Sized>(
    votes: &SignVector,
    map: &ResourceMap,
    randomization: Randomization,
    rng: &mut R,
) -> Result<ResourceGrid> {
    if votes.len() != map.len() {
        return Err(Error::Dimension(format!(
            "{} votes for a map of {} pairs",
            votes.len(),
            map.len()
        )));
    }
    let amp = FSK_SYMBOL_ENERGY.sqrt();
    let mut grid = ResourceGrid::zeros(map.num_symbols(), map.num_subcarriers());
    for (v, &(plus, minus)) in votes.iter().zip(map.pairs()) {
        let r = match randomization {
            Randomization::Qpsk => qpsk_point(rng),
            Randomization::None => Complex64::new(1.0, 0.0),
        };
        let (t, f) = if v > 0 { plus } else { minus };
        grid.set(t, f, amp * r);
    }
    Ok(grid)
}

/// Energy differences `Δ_i = |Y⁺_i|² - |Y⁻_i|²`.
pub fn fskmv_metrics(received: &ResourceGrid, map: &ResourceMap) -> Result<Vec<f64>> {
    if received.num_symbols() != map.num_symbols()
        || received.num_subcarriers() != map.num_subcarriers()
    {
        return Err(Error::Dimension(
            "received grid does not match the resource map".into(),
        ));
    }
    Ok(map
        .pairs()
        .iter()
        .map(|&((tp, fp), (tm, fm))| received.energy(tp, fp) - received.energy(tm, fm))
        .collect())
}

/// Non-coherent energy detector; exact ties are broken with `rng`.
pub fn fskmv_detect<R: Rng + ?Sized>(
    received: &ResourceGrid,
    map: &ResourceMap,
    rng: &mut R,
) -> Result<SignVector> {
    let deltas = fskmv_metrics(received, map)?;
    Ok(SignVector(
        deltas.into_iter().map(|d| random_sign(d, rng)).collect(),
    ))
}

/// Channel knowledge used by the OBDA transmitter.
#[derive(Debug, Clone, Copy)]
pub enum ObdaPrecoding<'a> {
    /// No CSI: symbols are sent as they are.
    Blind,
    /// Truncated channel inversion with the ED's per-subcarrier response.
    Tci {
        response: &'a [Complex64],
        threshold: f64,
    },
}

/// OBDA transmit grid with `symbols × m` resources. Votes `2j, 2j+1` form
/// `(v_{2j} + i v_{2j+1}) / √2` on linear subcarrier index `j`. An odd vote
/// count is padded with one random dummy vote.
pub fn obda_encode<R: Rng + ?Sized>(
    votes: &SignVector,
    symbols: usize,
    m: usize,
    precoding: ObdaPrecoding<'_>,
    rng: &mut R,
) -> Result<ResourceGrid> {
    let q = votes.len();
    let used = q.div_ceil(2);
    if used > symbols * m {
        return Err(Error::Capacity {
            needed: used,
            available: symbols * m,
        });
    }
    if let ObdaPrecoding::Tci { response, .. } = precoding {
        if response.len() != m {
            return Err(Error::Dimension(
                "TCI needs one channel coefficient per subcarrier".into(),
            ));
        }
    }
    let pad = if q % 2 == 1 {
        if rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    } else {
        0.0
    };
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let v = votes.as_slice();
    let mut grid = ResourceGrid::zeros(symbols, m);
    for j in 0..used {
        let re = f64::from(v[2 * j]);
        let im = if 2 * j + 1 < q {
            f64::from(v[2 * j + 1])
        } else {
            pad
        };
        let mut x = Complex64::new(re, im) * s;
        let (t, f) = (j / m, j % m);
        if let ObdaPrecoding::Tci {
            response,
            threshold,
        } = precoding
        {
            let h = response[f];
            if h.norm() > threshold {
                x *= h.conj() / h.norm_sqr();
            } else {
                x = Complex64::new(0.0, 0.0);
            }
        }
        grid.set(t, f, x);
    }
    Ok(grid)
}

/// Signs of the real and imaginary parts of the superposed OBDA symbols,
/// truncated to `q` votes.
pub fn obda_detect<R: Rng + ?Sized>(
    received: &ResourceGrid,
    q: usize,
    rng: &mut R,
) -> Result<SignVector> {
    let m = received.num_subcarriers();
    if q.div_ceil(2) > received.num_symbols() * m {
        return Err(Error::Dimension(format!(
            "grid too small for {q} OBDA votes"
        )));
    }
    let mut out = Vec::with_capacity(q);
    for i in 0..q {
        let j = i / 2;
        let y = received.get(j / m, j % m);
        let part = if i % 2 == 0 { y.re } else { y.im };
        out.push(random_sign(part, rng));
    }
    Ok(SignVector(out))
}

/// Error-free majority vote of the ED votes.
pub fn ideal_mv<R: Rng + ?Sized>(votes: &[SignVector], rng: &mut R) -> Result<SignVector> {
    let q = votes
        .first()
        .map(SignVector::len)
        .ok_or_else(|| Error::Dimension("no votes".into()))?;
    if votes.iter().any(|v| v.len() != q) {
        return Err(Error::Dimension("vote vectors differ in length".into()));
    }
    Ok(SignVector(
        (0..q)
            .map(|i| {
                let sum: i64 = votes.iter().map(|v| i64::from(v.0[i])).sum();
                random_sign(sum as f64, rng)
            })
            .collect(),
    ))
}
