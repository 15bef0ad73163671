use crate::numerics::SeqTensor;

/// Pairwise cosine similarity of clip features; zero-norm rows give 0.
pub fn cosine_similarity_matrix(x: &SeqTensor) -> SeqTensor {
    let n = x.len();
    let norms: Vec<f64> = x.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut s = SeqTensor::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
                d / (norms[i] * norms[j])
            };
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

/// Mean similarity of clips `t` and `t + 1`.
pub fn mean_adjacent_similarity(x: &SeqTensor) -> f64 {
    if x.len() < 2 {
        return 1.0;
    }
    let s = cosine_similarity_matrix(x);
    (0..x.len() - 1).map(|t| s.get(t, t + 1)).sum::<f64>() / (x.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_properties() {
        let x = SeqTensor::from_rows(&[[1.0, 0.0], [0.0, 2.0], [2.0, 0.0], [0.0, 0.0]]).unwrap();
        let s = cosine_similarity_matrix(&x);
        for i in 0..3 {
            assert_eq!(s.get(i, i), 1.0);
        }
        assert_eq!(s.get(3, 3), 0.0);
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(0, 2), 1.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
    }
}
