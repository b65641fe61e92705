#include <stdio.h>
#include <string.h>
#include "kan_ausculta.h"

int main(int argc, char **argv) {
    if (argc < 2) return 2;
    if (ka_class_count() != 6 || strcmp(ka_class_name(1), "COPD") != 0) return 3;
    KaModel *model = NULL;
    if (ka_model_load("/nonexistent.json", &model) != KA_STATUS_IO || ka_last_error() == NULL) return 4;
    if (ka_model_load(argv[1], &model) != KA_STATUS_OK) return 5;
    size_t d = ka_model_feature_dim(model);
    double x[16] = {0};
    double p[6];
    if (d > 16) return 6;
    for (size_t i = 0; i < d; i++) x[i] = 0.1 * (double)i;
    if (ka_model_predict(model, x, d, p, 6) != KA_STATUS_OK) return 7;
    double s = 0;
    for (int i = 0; i < 6; i++) s += p[i];
    ka_model_free(model);
    printf("%.12f\n", s);
    return (s > 0.999999 && s < 1.000001) ? 0 : 8;
}
