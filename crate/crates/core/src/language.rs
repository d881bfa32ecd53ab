//! Syntax-tree encoding of questions.
//!
//! Leaves are word embeddings passed through `τ(x) = tanh(x·W_τ + b_τ)`.
//! An internal node is the γ-weighted sum of its children's embeddings;
//! τ is applied once, at the leaves. Because the composition above the
//! leaves is linear, the whole tree reduces to `L = P · T` where `T` holds
//! the transformed leaves and `P[j, leaf]` is the product of γ along the
//! path from node `j` down to that leaf. `P` is built bottom-up in one pass.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VlqaError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub children: Vec<usize>,
    /// Attention scores aligned with `children`.
    pub scores: Vec<f64>,
    /// Vocabulary index; present exactly on leaves.
    pub token: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntaxTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
}

/// Precomputed structure of a validated tree.
#[derive(Clone, Debug)]
pub struct TreeLayout {
    /// `N × n_leaves` aggregation matrix.
    pub aggregation: Tensor,
    /// Token of each leaf, in leaf order.
    pub leaf_tokens: Vec<usize>,
    /// Depth of each node (root = 0), in node order.
    pub depths: Vec<usize>,
    /// Position of the root in `nodes`.
    pub root_index: usize,
}

impl SyntaxTree {
    /// Right-branching tree with uniform scores, for free text.
    pub fn right_branching(tokens: &[usize]) -> Result<Self> {
        if tokens.is_empty() {
            return Err(VlqaError::Precondition("no tokens to build a tree from".into()));
        }
        let mut nodes: Vec<TreeNode> = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| TreeNode {
                id: i,
                children: vec![],
                scores: vec![],
                token: Some(t),
            })
            .collect();
        let mut spine = tokens.len() - 1;
        for i in (0..tokens.len() - 1).rev() {
            let id = nodes.len();
            nodes.push(TreeNode {
                id,
                children: vec![i, spine],
                scores: vec![0.5, 0.5],
                token: None,
            });
            spine = id;
        }
        Ok(Self { nodes, root: spine })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Check every structural invariant and build the aggregation layout.
    pub fn layout(&self) -> Result<TreeLayout> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(VlqaError::Structure("empty tree".into()));
        }
        let mut pos: HashMap<usize, usize> = HashMap::with_capacity(n);
        for (i, node) in self.nodes.iter().enumerate() {
            if pos.insert(node.id, i).is_some() {
                return Err(VlqaError::Structure(format!("duplicate node id {}", node.id)));
            }
        }
        let root_index = *pos
            .get(&self.root)
            .ok_or_else(|| VlqaError::Structure(format!("root {} is not a node", self.root)))?;

        let mut parent: Vec<Option<usize>> = vec![None; n];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.children.len() != node.scores.len() {
                return Err(VlqaError::Schema(format!(
                    "node {}: {} children but {} scores",
                    node.id,
                    node.children.len(),
                    node.scores.len()
                )));
            }
            match (node.children.is_empty(), node.token) {
                (true, None) => {
                    return Err(VlqaError::Structure(format!(
                        "leaf {} carries no token",
                        node.id
                    )))
                }
                (false, Some(_)) => {
                    return Err(VlqaError::Structure(format!(
                        "internal node {} carries a token",
                        node.id
                    )))
                }
                _ => {}
            }
            if !node.children.is_empty() {
                let total: f64 = node.scores.iter().sum();
                if node.scores.iter().any(|&s| !(s >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(VlqaError::Schema(format!(
                        "node {}: child scores {:?} are not a distribution",
                        node.id, node.scores
                    )));
                }
            }
            for &c in &node.children {
                let ci = *pos.get(&c).ok_or_else(|| {
                    VlqaError::Structure(format!("node {} has unknown child {c}", node.id))
                })?;
                if parent[ci].replace(i).is_some() {
                    return Err(VlqaError::Structure(format!("node {c} has two parents")));
                }
            }
        }
        if parent[root_index].is_some() {
            return Err(VlqaError::Structure(format!(
                "root {} has a parent (cycle)",
                self.root
            )));
        }

        // Iterative post-order from the root; anything unreached is either a
        // second root or part of a cycle.
        let mut order = Vec::with_capacity(n);
        let mut depths = vec![0usize; n];
        let mut seen = vec![false; n];
        let mut stack = vec![(root_index, false)];
        while let Some((i, expanded)) = stack.pop() {
            if expanded {
                order.push(i);
                continue;
            }
            if seen[i] {
                return Err(VlqaError::Structure("cycle in tree".into()));
            }
            seen[i] = true;
            stack.push((i, true));
            for &c in self.nodes[i].children.iter().rev() {
                let ci = pos[&c];
                depths[ci] = depths[i] + 1;
                stack.push((ci, false));
            }
        }
        if order.len() != n {
            return Err(VlqaError::Structure(format!(
                "{} of {} nodes unreachable from the root (cycle or second root)",
                n - order.len(),
                n
            )));
        }

        let leaves: Vec<usize> = (0..n)
            .filter(|&i| self.nodes[i].children.is_empty())
            .collect();
        let leaf_col: HashMap<usize, usize> =
            leaves.iter().enumerate().map(|(col, &i)| (i, col)).collect();
        let nl = leaves.len();
        let mut agg = vec![0.0; n * nl];
        for &i in &order {
            let node = &self.nodes[i];
            if node.children.is_empty() {
                agg[i * nl + leaf_col[&i]] = 1.0;
            } else {
                for (&c, &g) in node.children.iter().zip(&node.scores) {
                    let ci = pos[&c];
                    for col in 0..nl {
                        agg[i * nl + col] += g * agg[ci * nl + col];
                    }
                }
            }
        }
        Ok(TreeLayout {
            aggregation: Tensor::new(vec![n, nl], agg)?,
            leaf_tokens: leaves.iter().map(|&i| self.nodes[i].token.unwrap()).collect(),
            depths,
            root_index,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageEncoding {
    /// One row per node, in node-list order.
    pub nodes: Tensor,
    /// Question intent: the root's row.
    pub q: Tensor,
}

/// Parameters of the language branch as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct LanguageVars {
    pub table: Var,
    pub tau_w: Var,
    pub tau_b: Var,
}

pub fn embed_tokens_on(tape: &mut Tape, table: Var, ids: &[usize]) -> Result<Var> {
    let (vocab, _) = tape.value(table).dims2()?;
    if let Some(&bad) = ids.iter().find(|&&t| t >= vocab) {
        return Err(VlqaError::Vocabulary(format!(
            "token id {bad} outside vocabulary of {vocab}"
        )));
    }
    tape.gather_rows(table, ids)
}

pub fn embed_tokens(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let t = tape.constant(table.clone())?;
    let out = embed_tokens_on(&mut tape, t, ids)?;
    Ok(tape.value(out).clone())
}

/// `τ(e)` for a matrix of embeddings.
pub fn tau_on(tape: &mut Tape, e: Var, vars: &LanguageVars) -> Result<Var> {
    let x = tape.matmul(e, vars.tau_w)?;
    let x = tape.add_row(x, vars.tau_b)?;
    tape.tanh(x)
}

/// Returns `(L, q)`: the `N × D` node matrix and the `1 × D` root row. With
/// `flat` set every node receives the plain mean of the transformed leaves.
pub fn encode_tree_on(
    tape: &mut Tape,
    layout: &TreeLayout,
    vars: &LanguageVars,
    flat: bool,
) -> Result<(Var, Var)> {
    let e = embed_tokens_on(tape, vars.table, &layout.leaf_tokens)?;
    let leaves = tau_on(tape, e, vars)?;
    let agg = if flat {
        let (n, nl) = layout.aggregation.dims2()?;
        Tensor::filled(&[n, nl], 1.0 / nl as f64)
    } else {
        layout.aggregation.clone()
    };
    let agg = tape.constant(agg)?;
    let nodes = tape.matmul(agg, leaves)?;
    let q = tape.gather_rows(nodes, &[layout.root_index])?;
    Ok((nodes, q))
}

pub fn encode_tree(
    tree: &SyntaxTree,
    table: &Tensor,
    tau_w: &Tensor,
    tau_b: &Tensor,
) -> Result<LanguageEncoding> {
    let layout = tree.layout()?;
    let mut tape = Tape::new();
    let vars = LanguageVars {
        table: tape.constant(table.clone())?,
        tau_w: tape.constant(tau_w.clone())?,
        tau_b: tape.constant(tau_b.clone())?,
    };
    let (nodes, q) = encode_tree_on(&mut tape, &layout, &vars, false)?;
    let q = tape.value(q).data().to_vec();
    Ok(LanguageEncoding {
        nodes: tape.value(nodes).clone(),
        q: Tensor::vector(q),
    })
}

pub fn init_table(rng: &mut impl Rng, vocab: usize, dim: usize) -> Tensor {
    let data = (0..vocab * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![vocab, dim], data).expect("shape matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(id: usize, token: usize) -> TreeNode {
        TreeNode {
            id,
            children: vec![],
            scores: vec![],
            token: Some(token),
        }
    }

    fn internal(id: usize, children: Vec<usize>, scores: Vec<f64>) -> TreeNode {
        TreeNode {
            id,
            children,
            scores,
            token: None,
        }
    }

    fn params(d: usize) -> (Tensor, Tensor, Tensor) {
        let table = Tensor::new(
            vec![6, d],
            (0..6 * d).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect(),
        )
        .unwrap();
        let w = Tensor::new(
            vec![d, d],
            (0..d * d).map(|i| ((i * 3 % 7) as f64 - 3.0) / 4.0).collect(),
        )
        .unwrap();
        let b = Tensor::vector((0..d).map(|i| i as f64 * 0.1).collect());
        (table, w, b)
    }

    #[test]
    fn empty_embedding_is_zero_rows() {
        let (table, _, _) = params(3);
        let e = embed_tokens(&table, &[]).unwrap();
        assert_eq!(e.shape(), &[0, 3]);
    }

    #[test]
    fn repeated_token_gives_identical_rows() {
        let (table, _, _) = params(3);
        let e = embed_tokens(&table, &[5, 5]).unwrap();
        assert_eq!(e.row(0), e.row(1));
        assert_eq!(e.row(0), table.row(5));
    }

    #[test]
    fn out_of_vocab_names_the_id() {
        let (table, _, _) = params(3);
        let msg = embed_tokens(&table, &[2, 17]).unwrap_err().to_string();
        assert!(msg.contains("17"), "{msg}");
    }

    #[test]
    fn single_leaf_is_tau_of_token() {
        let (table, w, b) = params(4);
        let tree = SyntaxTree {
            nodes: vec![leaf(0, 3)],
            root: 0,
        };
        let enc = encode_tree(&tree, &table, &w, &b).unwrap();
        let e = Tensor::row_vector(table.row(3).to_vec());
        let expected = e.matmul(&w).unwrap().add(&Tensor::row_vector(b.data().to_vec())).unwrap();
        for (q, x) in enc.q.data().iter().zip(expected.data()) {
            assert_eq!(*q, x.tanh());
        }
    }

    #[test]
    fn degenerate_scores_copy_first_child() {
        let (table, w, b) = params(4);
        let tree = SyntaxTree {
            nodes: vec![leaf(0, 1), leaf(1, 2), internal(2, vec![0, 1], vec![1.0, 0.0])],
            root: 2,
        };
        let enc = encode_tree(&tree, &table, &w, &b).unwrap();
        assert_eq!(enc.nodes.row(2), enc.nodes.row(0));
        assert_eq!(enc.q.data(), enc.nodes.row(0));
    }

    #[test]
    fn uniform_over_identical_children() {
        let (table, w, b) = params(4);
        let tree = SyntaxTree {
            nodes: vec![leaf(0, 4), leaf(1, 4), internal(2, vec![0, 1], vec![0.5, 0.5])],
            root: 2,
        };
        let enc = encode_tree(&tree, &table, &w, &b).unwrap();
        for (p, c) in enc.nodes.row(2).iter().zip(enc.nodes.row(0)) {
            assert!((p - c).abs() < 1e-15);
        }
    }

    #[test]
    fn cycle_rejected() {
        let tree = SyntaxTree {
            nodes: vec![
                internal(0, vec![1], vec![1.0]),
                internal(1, vec![2], vec![1.0]),
                internal(2, vec![1], vec![1.0]),
            ],
            root: 0,
        };
        assert!(matches!(tree.layout(), Err(VlqaError::Structure(_))));
    }

    #[test]
    fn score_length_mismatch_is_schema_error() {
        let tree = SyntaxTree {
            nodes: vec![leaf(0, 1), internal(1, vec![0], vec![0.5, 0.5])],
            root: 1,
        };
        assert!(matches!(tree.layout(), Err(VlqaError::Schema(_))));
    }

    #[test]
    fn second_root_rejected() {
        let tree = SyntaxTree {
            nodes: vec![leaf(0, 1), leaf(1, 2)],
            root: 0,
        };
        assert!(matches!(tree.layout(), Err(VlqaError::Structure(_))));
    }

    #[test]
    fn right_branching_is_valid() {
        let tree = SyntaxTree::right_branching(&[1, 2, 3, 4]).unwrap();
        let layout = tree.layout().unwrap();
        assert_eq!(layout.leaf_tokens, vec![1, 2, 3, 4]);
        assert_eq!(tree.len(), 7);
        let root_row = layout.aggregation.row(layout.root_index);
        assert!((root_row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let single = SyntaxTree::right_branching(&[9]).unwrap();
        assert_eq!(single.len(), 1);
    }
}
