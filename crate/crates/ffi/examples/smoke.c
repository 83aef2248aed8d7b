/* Scores one user with a saved model: smoke <data-dir> <checkpoint> <user> <unix-time> */
#include <stdio.h>
#include <stdlib.h>

#include "crossrec.h"

static int report(CrStatus s) {
    char msg[512];
    cr_last_error(msg, sizeof msg);
    fprintf(stderr, "error %d: %s\n", (int)s, msg);
    return 1;
}

int main(int argc, char **argv) {
    if (argc != 5) {
        fprintf(stderr, "usage: %s <data-dir> <checkpoint> <user> <unix-time>\n", argv[0]);
        return 2;
    }
    CrDataset *data = NULL;
    CrModel *model = NULL;
    CrStatus s = cr_dataset_load(argv[1], NULL, &data);
    if (s != CR_STATUS_OK) return report(s);
    s = cr_model_load(argv[2], &model);
    if (s != CR_STATUS_OK) return report(s);

    size_t n = cr_dataset_n_items(data);
    double *scores = malloc(n * sizeof *scores);
    double *filtered = malloc(n * sizeof *filtered);
    unsigned char *mask = malloc(n);
    size_t *ranked = malloc(n * sizeof *ranked);
    long long t = atoll(argv[4]);
    if ((s = cr_model_score(model, data, argv[3], t, scores, n)) != CR_STATUS_OK) return report(s);
    if ((s = cr_eligibility(data, argv[3], t, mask, n)) != CR_STATUS_OK) return report(s);
    if ((s = cr_post_filter(scores, mask, n, filtered)) != CR_STATUS_OK) return report(s);
    if ((s = cr_rank(filtered, n, ranked)) != CR_STATUS_OK) return report(s);
    for (size_t i = 0; i < n && i < 3; i++) printf("%zu %.6f\n", ranked[i], filtered[ranked[i]]);

    free(scores);
    free(filtered);
    free(mask);
    free(ranked);
    cr_model_free(model);
    cr_dataset_free(data);
    return 0;
}
