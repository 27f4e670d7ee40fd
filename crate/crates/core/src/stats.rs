//! Compensated summation and Monte-Carlo summaries.

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<KahanSum>().value()
}

/// Sample mean and its standard error (`sd / sqrt(n)`); the error is 0 for
/// fewer than two values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

pub fn mean_se(values: &[f64]) -> MeanSe {
    let n = values.len();
    if n == 0 {
        return MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
        };
    }
    let mean = sum(values) / n as f64;
    if n < 2 {
        return MeanSe { mean, se: 0.0 };
    }
    let ss: KahanSum = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = ss.value() / (n - 1) as f64;
    MeanSe {
        mean,
        se: (var / n as f64).sqrt(),
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_p(v: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    } else if p == 2.0 {
        norm2(v)
    } else {
        v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut v = vec![1e16, 1.0, -1e16];
        v.extend(std::iter::repeat(1e-3).take(1000));
        assert!((sum(&v) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mean_se_of_constant() {
        let m = mean_se(&[2.0; 10]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.se, 0.0);
    }

    #[test]
    fn mean_se_known_values() {
        let m = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        // sd = sqrt(5/3)
        assert!((m.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn norms() {
        assert_eq!(norm_p(&[3.0, -4.0], 1.0), 7.0);
        assert_eq!(norm_p(&[3.0, -4.0], 2.0), 5.0);
        assert_eq!(norm_p(&[3.0, -4.0], f64::INFINITY), 4.0);
    }
}
