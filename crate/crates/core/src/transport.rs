//! Exact solvers behind the d0 metric: a chain dynamic program on a line and
//! successive shortest paths for the truncated-distance transport problem.

/// `max sum w_j phi_j` over `|phi_j| <= 1`, `|phi_{j+1} - phi_j| <= h`.
///
/// The value function of the prefix is concave and piecewise linear in the
/// last coordinate; each step takes a sliding-window maximum and adds `w_j phi`.
pub(crate) fn chain_lp(w: &[f64], h: f64) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    let mut xs = vec![-1.0, 1.0];
    let mut ys = vec![-w[0], w[0]];
    for &wj in &w[1..] {
        let p = argmax(&ys);
        let mut nx = Vec::with_capacity(xs.len() + 1);
        let mut ny = Vec::with_capacity(xs.len() + 1);
        for i in 0..=p {
            nx.push(xs[i] - h);
            ny.push(ys[i]);
        }
        nx.push(xs[p] + h);
        ny.push(ys[p]);
        for i in p + 1..xs.len() {
            nx.push(xs[i] + h);
            ny.push(ys[i]);
        }
        let (cx, cy) = clip(&nx, &ny);
        xs = cx;
        ys = cy;
        for (x, y) in xs.iter().zip(ys.iter_mut()) {
            *y += wj * x;
        }
        prune(&mut xs, &mut ys);
    }
    ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn argmax(ys: &[f64]) -> usize {
    let mut best = 0;
    for (i, y) in ys.iter().enumerate() {
        if *y > ys[best] {
            best = i;
        }
    }
    best
}

fn interp(x0: f64, y0: f64, x1: f64, y1: f64, x: f64) -> f64 {
    if x1 == x0 {
        return y0.max(y1);
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Restricts a piecewise-linear graph on `[xs[0], xs[last]] ⊇ [-1, 1]` to `[-1, 1]`.
fn clip(xs: &[f64], ys: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ox = Vec::with_capacity(xs.len());
    let mut oy = Vec::with_capacity(xs.len());
    let at = |x: f64| -> f64 {
        let k = xs.partition_point(|&v| v < x);
        if k == 0 {
            ys[0]
        } else if k >= xs.len() {
            ys[xs.len() - 1]
        } else {
            interp(xs[k - 1], ys[k - 1], xs[k], ys[k], x)
        }
    };
    ox.push(-1.0);
    oy.push(at(-1.0));
    for (x, y) in xs.iter().zip(ys) {
        if *x > -1.0 && *x < 1.0 {
            ox.push(*x);
            oy.push(*y);
        }
    }
    ox.push(1.0);
    oy.push(at(1.0));
    (ox, oy)
}

/// Drops duplicate abscissae and interior points on a straight segment.
fn prune(xs: &mut Vec<f64>, ys: &mut Vec<f64>) {
    let mut ox: Vec<f64> = Vec::with_capacity(xs.len());
    let mut oy: Vec<f64> = Vec::with_capacity(xs.len());
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        if let Some(&lx) = ox.last() {
            if (x - lx).abs() <= 1e-15 {
                let ly = oy.last_mut().unwrap();
                *ly = ly.max(y);
                continue;
            }
        }
        while ox.len() >= 2 {
            let k = ox.len();
            let (x0, y0, x1, y1) = (ox[k - 2], oy[k - 2], ox[k - 1], oy[k - 1]);
            let mid = interp(x0, y0, x, y, x1);
            if (mid - y1).abs() <= 1e-14 * (1.0 + y1.abs()) {
                ox.pop();
                oy.pop();
            } else {
                break;
            }
        }
        ox.push(x);
        oy.push(y);
    }
    *xs = ox;
    *ys = oy;
}

/// Optimal transport of `supply` onto `demand` (equal totals) with cost
/// matrix `cost(i, j)`, by successive shortest paths with potentials.
pub(crate) fn min_cost_transport<C: Fn(usize, usize) -> f64>(
    supply: &[f64],
    demand: &[f64],
    cost: C,
) -> f64 {
    let s = supply.len();
    let d = demand.len();
    if s == 0 || d == 0 {
        return 0.0;
    }
    let c: Vec<f64> = (0..s * d).map(|k| cost(k / d, k % d)).collect();
    let mut flow = vec![0.0f64; s * d];
    let mut rs = supply.to_vec();
    let mut rd = demand.to_vec();
    let total: f64 = supply.iter().sum();
    let eps = 1e-15 * total.max(1e-300);
    // node ids: supplies 0..s, demands s..s+d
    let n = s + d;
    let mut pot = vec![0.0f64; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    loop {
        let remaining: f64 = rs.iter().sum();
        if remaining <= eps * 16.0 {
            break;
        }
        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        done.fill(false);
        for i in 0..s {
            if rs[i] > eps {
                dist[i] = -pot[i];
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut du = f64::INFINITY;
            for v in 0..n {
                if !done[v] && dist[v] < du {
                    du = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < s {
                let row = &c[u * d..(u + 1) * d];
                for j in 0..d {
                    let v = s + j;
                    let nd = du + row[j] + pot[u] - pot[v];
                    if !done[v] && nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = u;
                    }
                }
            } else {
                let j = u - s;
                for i in 0..s {
                    if done[i] || flow[i * d + j] <= eps {
                        continue;
                    }
                    let nd = du - c[i * d + j] + pot[u] - pot[i];
                    if nd < dist[i] {
                        dist[i] = nd;
                        prev[i] = u;
                    }
                }
            }
        }
        let mut target = usize::MAX;
        let mut best = f64::INFINITY;
        for j in 0..d {
            let v = s + j;
            if rd[j] > eps && dist[v].is_finite() && dist[v] + pot[v] < best {
                best = dist[v] + pot[v];
                target = v;
            }
        }
        if target == usize::MAX {
            break;
        }
        let reach = dist.iter().cloned().filter(|x| x.is_finite()).fold(0.0, f64::max);
        for v in 0..n {
            pot[v] += if dist[v].is_finite() { dist[v] } else { reach };
        }
        // bottleneck along the path
        let mut amount = rd[target - s];
        let mut v = target;
        let mut start = v;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= s {
                amount = amount.min(flow[v * d + (u - s)]);
            }
            v = u;
            start = v;
        }
        amount = amount.min(rs[start]);
        let mut v = target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < s {
                flow[u * d + (v - s)] += amount;
            } else {
                flow[v * d + (u - s)] -= amount;
            }
            v = u;
        }
        rs[start] -= amount;
        rd[target - s] -= amount;
    }
    flow.iter().zip(&c).map(|(f, c)| f * c).sum()
}
