use super::{Problem, SolveReport, Status, Targets};
use crate::error::Result;
use crate::netmodel::{pseudo_groups, EncodingOrder, NetworkSpec};

/// Outcome of the order search.
#[derive(Clone, Debug)]
pub struct OrderSearch {
    pub order: EncodingOrder,
    pub report: SolveReport,
    /// Every order tried, with its cost (lower is better).
    pub visited: Vec<(EncodingOrder, f64)>,
}

fn refill(list: &mut [usize], members: &[usize], ranked: &[usize]) {
    let mut slots: Vec<usize> = members
        .iter()
        .map(|m| list.iter().position(|x| x == m).expect("member of node list"))
        .collect();
    slots.sort_unstable();
    for (slot, &link) in slots.into_iter().zip(ranked) {
        list[slot] = link;
    }
}

fn ranked(members: &[usize], list: &[usize], nu: &[f64], descending: bool) -> Vec<usize> {
    let mut m = members.to_vec();
    let pos = |x: usize| list.iter().position(|&y| y == x).unwrap_or(usize::MAX);
    m.sort_by(|&a, &b| {
        let o = nu[a].total_cmp(&nu[b]);
        let o = if descending { o.reverse() } else { o };
        o.then(pos(a).cmp(&pos(b)))
    });
    m
}

/// Inside every pseudo BC, encode links in descending water level; inside
/// every pseudo MAC, decode in ascending level. Other links keep their slots.
pub fn reorder_by_levels(net_with_order: &NetworkSpec, order: &EncodingOrder, nu: &[f64]) -> EncodingOrder {
    let groups = pseudo_groups(net_with_order);
    let mut next = order.clone();
    for set in &groups.bc {
        let node = net_with_order.tx_node(set[0]);
        if let Some(list) = next.encode.get_mut(&node) {
            let r = ranked(set, list, nu, true);
            refill(list, set, &r);
        }
    }
    for set in &groups.mac {
        let node = net_with_order.rx_node(set[0]);
        if let Some(list) = next.decode.get_mut(&node) {
            let r = ranked(set, list, nu, false);
            refill(list, set, &r);
        }
    }
    next
}

/// Alternates solving at a fixed order with re-sorting pseudo BC/MAC orders
/// by the resulting water levels. Stops when the order is stable; when an
/// order repeats, returns the best one seen with status
/// [`Status::OrderCycle`].
pub fn algorithm_o(
    net: &NetworkSpec,
    targets: &Targets,
    problem: Problem,
    initial: EncodingOrder,
    max_passes: usize,
    mut solve: impl FnMut(&NetworkSpec) -> Result<SolveReport>,
) -> Result<OrderSearch> {
    let mut order = initial;
    let mut seen: Vec<(EncodingOrder, f64, SolveReport)> = Vec::new();
    loop {
        let net_pi = net.with_order(&order)?;
        let rep = solve(&net_pi)?;
        let cost = problem.cost(&rep, targets);
        let next = reorder_by_levels(&net_pi, &order, &rep.nu);
        seen.push((order.clone(), cost, rep));
        if next == order {
            let (order, _, report) = seen.pop().expect("just pushed");
            let mut visited: Vec<_> = seen.into_iter().map(|(o, c, _)| (o, c)).collect();
            visited.push((order.clone(), cost));
            return Ok(OrderSearch { order, report, visited });
        }
        let cycled = seen.iter().any(|(o, _, _)| *o == next);
        if cycled || seen.len() >= max_passes.max(1) {
            let best = seen
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .map(|(i, _)| i)
                .expect("nonempty");
            let visited: Vec<_> = seen.iter().map(|(o, c, _)| (o.clone(), *c)).collect();
            let (order, _, mut report) = seen.swap_remove(best);
            report.status = if cycled { Status::OrderCycle } else { Status::MaxIters };
            return Ok(OrderSearch { order, report, visited });
        }
        order = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, CMat};
    use crate::solvers::{algorithm_pr, SolverOptions};
    use nalgebra::DMatrix;

    fn scalar_mac(g: &[f64]) -> NetworkSpec {
        let n = g.len();
        NetworkSpec::new(
            (0..n).map(|_| (0..n).map(|k| CMat::from_element(1, 1, c(g[k], 0.0))).collect()).collect(),
            DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }),
        )
        .unwrap()
        .with_nodes((0..n).collect(), vec![0; n])
        .unwrap()
    }

    #[test]
    fn mac_order_matches_brute_force() {
        let net = scalar_mac(&[1.0, 0.6]);
        let targets = Targets::new(vec![0.4, 1.2]).unwrap();
        let solve = |n: &NetworkSpec| algorithm_pr(n, &targets, &SolverOptions::default());
        let natural = EncodingOrder::natural(&net);
        let search = algorithm_o(&net, &targets, Problem::Spmp, natural.clone(), 10, solve).unwrap();
        let mut best = f64::INFINITY;
        for dec in [vec![0, 1], vec![1, 0]] {
            let mut o = natural.clone();
            o.decode.insert(0, dec);
            let rep = solve(&net.with_order(&o).unwrap()).unwrap();
            best = best.min(rep.sum_power);
        }
        assert!(search.report.sum_power <= best * (1.0 + 1e-6), "{} vs {}", search.report.sum_power, best);
    }

    #[test]
    fn symmetric_mac_stops_after_one_pass() {
        let net = scalar_mac(&[1.0, 1.0]);
        let targets = Targets::uniform(2, 0.5).unwrap();
        let solve = |n: &NetworkSpec| algorithm_pr(n, &targets, &SolverOptions::default());
        let search = algorithm_o(&net, &targets, Problem::Spmp, EncodingOrder::natural(&net), 10, solve).unwrap();
        assert_eq!(search.visited.len(), 1);
    }
}
