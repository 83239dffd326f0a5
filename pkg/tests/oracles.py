"""Independent reference implementations used as test oracles."""

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


def row_mean_matrix(n_rows, n_cols, pairs):
    """Row-normalised 0/1 adjacency from (row, col) pairs; empty rows stay zero."""
    A = np.zeros((n_rows, n_cols))
    for r, c in pairs:
        A[r, c] = 1.0
    deg = A.sum(axis=1, keepdims=True)
    return np.divide(A, deg, out=np.zeros_like(A), where=deg > 0), deg[:, 0] > 0


def dense_propagation(clicks, news_topic, news_features, user_table, topic_table, W_u, W_z,
                      W_news_to_user, W_news_to_topic, layers, hops, self_loops=False):
    """Every node's hop-H embedding by whole-graph matrix products.

    ``layers`` is a list of (W, b) per hop.  A user/topic with no news
    neighbor passes its own previous-hop embedding into the layer; with
    ``self_loops`` every node adds its own previous-hop embedding.
    """
    n_news, n_users, n_topics = len(news_topic), len(user_table), len(topic_table)
    A_nu, _ = row_mean_matrix(n_news, n_users, [(d, u) for u, d in clicks])
    A_un, has_u = row_mean_matrix(n_users, n_news, [(u, d) for u, d in clicks])
    A_tn, has_t = row_mean_matrix(n_topics, n_news, [(t, d) for d, t in enumerate(news_topic)])
    Z = np.zeros((n_news, n_topics))
    Z[np.arange(n_news), news_topic] = 1.0
    N, U, T = news_features, user_table, topic_table
    for h in range(hops):
        W, b = layers[h]
        n_agg = A_nu @ U @ W_u.T + Z @ T @ W_z.T
        u_agg = np.where(has_u[:, None], A_un @ N @ W_news_to_user.T, U)
        t_agg = np.where(has_t[:, None], A_tn @ N @ W_news_to_topic.T, T)
        if self_loops:
            n_agg = n_agg + N
            u_agg = u_agg + np.where(has_u[:, None], U, 0.0)
            t_agg = t_agg + np.where(has_t[:, None], T, 0.0)
        N, U, T = relu(n_agg @ W.T + b), relu(u_agg @ W.T + b), relu(t_agg @ W.T + b)
    return U, N


def brute_force_auc(labels, scores):
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    pos, neg = scores[labels], scores[~labels]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))
