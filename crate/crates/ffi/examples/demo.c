/* Greedy generation through the C ABI. Prints the generated ids. */
#include <stdio.h>

#include "paraserve.h"

int main(void) {
    ParaModelConfig cfg;
    ParaModel *model = NULL;
    ParaAdapter *adapter = NULL;
    uint32_t prompt[] = {1, 2, 3, 4, 63};
    uint32_t out[8];
    size_t len = 0, invocations = 0;
    uint64_t headline = 0, with_bias = 0;

    if (para_config_desk(&cfg) != PARA_STATUS_OK) return 1;
    if (para_model_new_random(&cfg, 7, PARA_PRECISION_F64, &model) != PARA_STATUS_OK) {
        fprintf(stderr, "%s\n", para_last_error());
        return 1;
    }
    if (para_adapter_init(model, PARA_METHOD_PARA, 1, &adapter) != PARA_STATUS_OK) return 1;
    if (para_generate(model, adapter, prompt, 5, 8, 1, out, 8, &len, &invocations) != PARA_STATUS_OK) {
        fprintf(stderr, "%s\n", para_last_error());
        return 1;
    }
    para_count_params(&cfg, PARA_METHOD_PARA, &headline, &with_bias);
    for (size_t i = 0; i < len; i++) printf("%u%s", out[i], i + 1 < len ? " " : "\n");
    printf("generator invocations %zu, tunable %llu\n", invocations, (unsigned long long)headline);
    para_adapter_free(adapter);
    para_model_free(model);
    return 0;
}
