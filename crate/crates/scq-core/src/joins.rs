//! Join-tree machinery for acyclic queries: GYO ear decomposition, the
//! classic full reducer (semijoin sweeps), a backtracking hash join used to
//! materialize intermediate results, and per-tuple result counting.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::query::{bind, QuerySpec};
use crate::relation::{AttributeId, DatabaseInstance, GroupKey, Relation, Tuple, ValueKey};

/// Rooted join tree over the atoms of an acyclic query.
#[derive(Debug, Clone)]
pub struct JoinTree {
    /// Parent atom index, `None` for the root.
    pub parent: Vec<Option<usize>>,
    /// Ear-elimination order (leaves towards the root; root last).
    pub order: Vec<usize>,
}

impl JoinTree {
    /// Re-roots the tree at `root`, returning new parent links and a
    /// bottom-up processing order (children before parents).
    pub fn rooted_at(&self, root: usize) -> (Vec<Option<usize>>, Vec<usize>) {
        let n = self.parent.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                adj[i].push(*p);
                adj[*p].push(i);
            }
        }
        let mut parent = vec![None; n];
        let mut bfs = vec![root];
        let mut seen = vec![false; n];
        seen[root] = true;
        let mut i = 0;
        while i < bfs.len() {
            let u = bfs[i];
            i += 1;
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    bfs.push(v);
                }
            }
        }
        bfs.reverse();
        (parent, bfs)
    }
}

/// Builds a join tree by GYO ear elimination; errors with `CyclicQuery`
/// when none exists.
pub fn build_join_tree(q: &QuerySpec) -> Result<JoinTree> {
    let m = q.atoms().len();
    let attr_sets: Vec<HashSet<&AttributeId>> = q
        .atoms()
        .iter()
        .map(|a| a.attrs.iter().collect())
        .collect();
    let mut alive: Vec<bool> = vec![true; m];
    let mut parent: Vec<Option<usize>> = vec![None; m];
    let mut order = Vec::with_capacity(m);
    let mut remaining = m;
    while remaining > 1 {
        let mut eliminated = false;
        'outer: for i in 0..m {
            if !alive[i] {
                continue;
            }
            // attrs of atom i shared with any other live atom
            let shared: HashSet<&AttributeId> = attr_sets[i]
                .iter()
                .copied()
                .filter(|a| {
                    (0..m).any(|j| j != i && alive[j] && attr_sets[j].contains(*a))
                })
                .collect();
            for j in 0..m {
                if j != i && alive[j] && shared.is_subset(&attr_sets[j]) {
                    parent[i] = Some(j);
                    alive[i] = false;
                    order.push(i);
                    remaining -= 1;
                    eliminated = true;
                    break 'outer;
                }
            }
        }
        if !eliminated {
            return Err(Error::CyclicQuery);
        }
    }
    let root = (0..m).find(|&i| alive[i]).unwrap();
    order.push(root);
    Ok(JoinTree { parent, order })
}

fn shared_positions(a: &Relation, b: &Relation) -> (Vec<usize>, Vec<usize>) {
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    for (i, attr) in a.attrs.iter().enumerate() {
        if let Some(j) = b.position(attr) {
            pa.push(i);
            pb.push(j);
        }
    }
    (pa, pb)
}

fn key_set(rel: &Relation, positions: &[usize]) -> HashSet<GroupKey> {
    rel.tuples.iter().map(|t| t.key(positions)).collect()
}

/// Full reducer over bound atom relations: after two semijoin sweeps every
/// remaining tuple participates in at least one join result. Original tuple
/// ids are preserved; use [`renumber`] when fresh ids are needed.
pub fn reduce_atoms(atoms: &[Relation], tree: &JoinTree) -> Vec<Relation> {
    let mut rels: Vec<Relation> = atoms.to_vec();
    // bottom-up: parent ⋉ child, in elimination order
    for &child in &tree.order {
        if let Some(p) = tree.parent[child] {
            let (pp, pc) = shared_positions(&rels[p], &rels[child]);
            if pp.is_empty() {
                if rels[child].is_empty() {
                    rels[p].tuples.clear();
                }
                continue;
            }
            let keys = key_set(&rels[child], &pc);
            rels[p].tuples.retain(|t| keys.contains(&t.key(&pp)));
        }
    }
    // top-down: child ⋉ parent, in reverse order
    for &child in tree.order.iter().rev() {
        if let Some(p) = tree.parent[child] {
            let (pp, pc) = shared_positions(&rels[p], &rels[child]);
            if pp.is_empty() {
                if rels[p].is_empty() {
                    rels[child].tuples.clear();
                }
                continue;
            }
            let keys = key_set(&rels[p], &pp);
            rels[child].tuples.retain(|t| keys.contains(&t.key(&pc)));
        }
    }
    rels
}

/// Renumbers tuple ids to `0..len` per relation.
pub fn renumber(mut rels: Vec<Relation>) -> Vec<Relation> {
    for rel in &mut rels {
        for (i, t) in rel.tuples.iter_mut().enumerate() {
            t.id = i as u32;
        }
    }
    rels
}

/// Binds and fully reduces the atoms of an acyclic query in one step,
/// renumbering tuple ids per atom.
pub fn bind_reduced(db: &DatabaseInstance, q: &QuerySpec) -> Result<Vec<Relation>> {
    let atoms = bind(db, q)?;
    let tree = build_join_tree(q)?;
    Ok(renumber(reduce_atoms(&atoms, &tree)))
}

/// Removes dangling tuples from the database: a tuple survives when it
/// participates in at least one join result through some atom that names
/// its relation. The query result multiset is unchanged.
pub fn semijoin_reduce(db: &DatabaseInstance, q: &QuerySpec) -> Result<DatabaseInstance> {
    let atoms = bind(db, q)?;
    let tree = build_join_tree(q)?;
    let reduced = reduce_atoms(&atoms, &tree);
    // per relation, union of surviving original ids over the atoms naming it
    let mut survivors: HashMap<String, HashSet<u32>> = HashMap::new();
    for (atom_idx, atom) in q.atoms().iter().enumerate() {
        let entry = survivors.entry(atom.relation.clone()).or_default();
        entry.extend(reduced[atom_idx].tuples.iter().map(|t| t.id));
    }
    let relations = db
        .relations
        .iter()
        .map(|rel| match survivors.get(&rel.name) {
            Some(ids) => rel.retain_reindexed(|id| ids.contains(&id)),
            None => rel.clone(),
        })
        .collect();
    DatabaseInstance::new(relations)
}

/// Backtracking hash join over bound atoms with optional pre-bound
/// attribute values. Emits tuples over `out_attrs`. `budget` caps the
/// number of emitted rows plus visited partial assignments.
pub fn hash_join(
    atoms: &[Relation],
    out_attrs: &[AttributeId],
    pre_bound: &HashMap<AttributeId, f64>,
    budget: u64,
) -> Result<Vec<Vec<f64>>> {
    if atoms.is_empty() {
        return Ok(vec![vec![]]);
    }
    // join order: greedily append the atom sharing attributes with the
    // bound set, falling back to any remaining atom (cartesian component)
    let m = atoms.len();
    let mut order: Vec<usize> = Vec::with_capacity(m);
    let mut bound: HashSet<AttributeId> = pre_bound.keys().cloned().collect();
    let mut used = vec![false; m];
    while order.len() < m {
        let next = (0..m)
            .filter(|&i| !used[i])
            .max_by_key(|&i| atoms[i].attrs.iter().filter(|a| bound.contains(a)).count())
            .unwrap();
        used[next] = true;
        bound.extend(atoms[next].attrs.iter().cloned());
        order.push(next);
    }
    // per step: positions of already-bound attrs, an index keyed by them
    struct Step {
        atom: usize,
        key_positions: Vec<usize>,
        index: HashMap<GroupKey, Vec<u32>>,
    }
    let mut steps = Vec::with_capacity(m);
    let mut bound: HashSet<AttributeId> = pre_bound.keys().cloned().collect();
    for &i in &order {
        let key_positions: Vec<usize> = atoms[i]
            .attrs
            .iter()
            .enumerate()
            .filter(|(_, a)| bound.contains(a))
            .map(|(p, _)| p)
            .collect();
        let mut index: HashMap<GroupKey, Vec<u32>> = HashMap::new();
        for (pos, t) in atoms[i].tuples.iter().enumerate() {
            index.entry(t.key(&key_positions)).or_default().push(pos as u32);
        }
        bound.extend(atoms[i].attrs.iter().cloned());
        steps.push(Step {
            atom: i,
            key_positions,
            index,
        });
    }

    let mut assignment: HashMap<AttributeId, f64> = pre_bound.clone();
    let mut results = Vec::new();
    let mut work: u64 = 0;

    fn descend(
        atoms: &[Relation],
        steps: &[Step],
        depth: usize,
        assignment: &mut HashMap<AttributeId, f64>,
        out_attrs: &[AttributeId],
        results: &mut Vec<Vec<f64>>,
        work: &mut u64,
        budget: u64,
    ) -> Result<()> {
        *work += 1;
        if *work > budget {
            return Err(Error::BudgetExceeded {
                estimated: *work,
                cap: budget,
            });
        }
        if depth == steps.len() {
            results.push(out_attrs.iter().map(|a| assignment[a]).collect());
            return Ok(());
        }
        let step = &steps[depth];
        let rel = &atoms[step.atom];
        let key: GroupKey = step
            .key_positions
            .iter()
            .map(|&p| ValueKey::of(assignment[&rel.attrs[p]]))
            .collect();
        let Some(ids) = step.index.get(&key) else {
            return Ok(());
        };
        for &pos in ids {
            let t: &Tuple = &rel.tuples[pos as usize];
            let mut newly = Vec::new();
            let mut ok = true;
            for (p, a) in rel.attrs.iter().enumerate() {
                match assignment.get(a) {
                    Some(v) => {
                        if *v != t.values[p] {
                            ok = false;
                            break;
                        }
                    }
                    None => {
                        assignment.insert(a.clone(), t.values[p]);
                        newly.push(a.clone());
                    }
                }
            }
            if ok {
                descend(atoms, steps, depth + 1, assignment, out_attrs, results, work, budget)?;
            }
            for a in newly {
                assignment.remove(&a);
            }
        }
        Ok(())
    }

    descend(atoms, &steps, 0, &mut assignment, out_attrs, &mut results, &mut work, budget)?;
    Ok(results)
}

/// For each tuple of the atom `root`, the number of full join results it
/// participates in. Atoms must already be fully reduced.
pub fn results_per_root_tuple(atoms: &[Relation], tree: &JoinTree, root: usize) -> Vec<u64> {
    let (parent, order) = tree.rooted_at(root);
    let mut counts: Vec<Vec<u64>> = atoms.iter().map(|r| vec![1u64; r.len()]).collect();
    for &u in &order {
        let Some(p) = parent[u] else { continue };
        let (pp, pu) = shared_positions(&atoms[p], &atoms[u]);
        let mut sums: HashMap<GroupKey, u64> = HashMap::new();
        for t in &atoms[u].tuples {
            *sums.entry(t.key(&pu)).or_insert(0) += counts[u][t.id as usize];
        }
        for t in &atoms[p].tuples {
            let s = sums.get(&t.key(&pp)).copied().unwrap_or(0);
            counts[p][t.id as usize] *= s;
        }
    }
    counts[root].clone()
}
